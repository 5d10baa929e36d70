use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::{Error, Result};

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn rel_err(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let num: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let den: f64 = a
        .data()
        .iter()
        .chain(b.data())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(1e-12);
    num / den
}

/// Checks d(loss)/d(x) from the tape against central differences, where `build`
/// records a scalar loss given the parameter `x`.
fn check_primitive<F>(x: Tensor<f64>, build: F)
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.param("x", x.clone());
    let loss = build(&mut tape, xv).unwrap();
    let grads = backprop(&tape, loss).unwrap();
    let analytic = grads.get_or_zeros("x", x.shape());
    let numeric = finite_diff_grad(
        |probe| {
            let mut t = Tape::new();
            let v = t.constant(probe.clone());
            let l = build(&mut t, v)?;
            Ok(t.value(l).data()[0])
        },
        &x,
        1e-5,
    )
    .unwrap();
    let err = rel_err(&analytic, &numeric);
    assert!(err <= 1e-4, "relative error {err}");
}

/// Random projection so that every output element feeds the loss with a distinct weight.
fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.value(y).shape().to_vec();
    let w = tape.constant(rand_tensor(&mut rng, &shape));
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

#[test]
fn sum_gradient_is_all_ones() {
    let mut tape = Tape::<f32>::new();
    let w = tape.param("w", Tensor::new(vec![2, 2], vec![1.0, -2.0, 3.0, 0.5]).unwrap());
    let loss = tape.sum(w).unwrap();
    let g = backprop(&tape, loss).unwrap();
    assert_eq!(g.get("w").unwrap().data(), &[1.0; 4]);
}

#[test]
fn zero_scaled_loss_has_zero_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut tape = Tape::<f64>::new();
    let w = tape.param("w", rand_tensor(&mut rng, &[3, 3]));
    let x = tape.constant(rand_tensor(&mut rng, &[2, 3]));
    let y = tape.matmul(x, w).unwrap();
    let s = tape.softmax(y).unwrap();
    let l = tape.sum(s).unwrap();
    let l = tape.scale(l, 0.0).unwrap();
    let g = backprop(&tape, l).unwrap();
    assert!(g.get("w").unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn parameters_off_the_tape_get_zero_gradients() {
    let mut tape = Tape::<f32>::new();
    let a = tape.param("a", Tensor::full(&[3], 2.0));
    let _unused = tape.param("b", Tensor::full(&[2], 1.0));
    let l = tape.sum(a).unwrap();
    let g = backprop(&tape, l).unwrap();
    assert_eq!(g.get_or_zeros("b", &[2]).data(), &[0.0, 0.0]);
    assert_eq!(g.get_or_zeros("missing", &[4]).data(), &[0.0; 4]);
}

#[test]
fn non_scalar_loss_is_a_contract_violation() {
    let mut tape = Tape::<f32>::new();
    let a = tape.param("a", Tensor::full(&[3], 2.0));
    assert!(matches!(backprop(&tape, a), Err(Error::Contract(_))));
}

#[test]
fn foreign_variables_are_rejected_at_record_time() {
    let mut t1 = Tape::<f32>::new();
    let mut t2 = Tape::<f32>::new();
    let a = t1.param("a", Tensor::full(&[3], 2.0));
    let b = t2.param("b", Tensor::full(&[3], 2.0));
    assert!(matches!(t1.add(a, b), Err(Error::Contract(_))));
}

#[test]
fn grad_matmul_both_sides() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let b = rand_tensor(&mut rng, &[4, 5]);
    let a = rand_tensor(&mut rng, &[3, 4]);
    check_primitive(a.clone(), |t, x| {
        let bv = t.constant(b.clone());
        let y = t.matmul(x, bv)?;
        project(t, y, 10)
    });
    check_primitive(b, |t, x| {
        let av = t.constant(a.clone());
        let y = t.matmul(av, x)?;
        project(t, y, 11)
    });
}

#[test]
fn grad_add_row_and_elementwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let base = rand_tensor(&mut rng, &[4, 6]);
    check_primitive(rand_tensor(&mut rng, &[6]), |t, x| {
        let b = t.constant(base.clone());
        let y = t.add_row(b, x)?;
        let y = t.relu(y)?;
        project(t, y, 12)
    });
    let other = rand_tensor(&mut rng, &[4, 6]);
    check_primitive(base.clone(), |t, x| {
        let o = t.constant(other.clone());
        let y = t.add(x, o)?;
        let y = t.mul(y, x)?;
        let y = t.scale(y, -1.7)?;
        project(t, y, 13)
    });
}

#[test]
fn grad_softmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    check_primitive(rand_tensor(&mut rng, &[5, 7]), |t, x| {
        let y = t.softmax(x)?;
        project(t, y, 14)
    });
}

#[test]
fn grad_layer_norm_all_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x0 = rand_tensor(&mut rng, &[4, 8]);
    let g0 = rand_tensor(&mut rng, &[8]);
    let b0 = rand_tensor(&mut rng, &[8]);
    check_primitive(x0.clone(), |t, x| {
        let g = t.constant(g0.clone());
        let b = t.constant(b0.clone());
        let y = t.layer_norm(x, g, b, 1e-5)?;
        project(t, y, 15)
    });
    check_primitive(g0.clone(), |t, g| {
        let x = t.constant(x0.clone());
        let b = t.constant(b0.clone());
        let y = t.layer_norm(x, g, b, 1e-5)?;
        project(t, y, 16)
    });
    check_primitive(b0, |t, b| {
        let x = t.constant(x0.clone());
        let g = t.constant(g0.clone());
        let y = t.layer_norm(x, g, b, 1e-5)?;
        project(t, y, 17)
    });
}

#[test]
fn grad_embedding_with_repeats() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    check_primitive(rand_tensor(&mut rng, &[6, 4]), |t, x| {
        let y = t.embedding(x, &[0, 3, 3, 5, 1])?;
        project(t, y, 18)
    });
}

#[test]
fn grad_cross_entropy_with_ignored_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    check_primitive(rand_tensor(&mut rng, &[5, 9]), |t, x| {
        t.cross_entropy(x, &[Some(1), None, Some(8), Some(0), None])
    });
}

#[test]
fn grad_dropout_uses_recorded_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    check_primitive(rand_tensor(&mut rng, &[4, 6]), |t, x| {
        // Same seed on every evaluation keeps the mask fixed across probes.
        let mut drng = ChaCha8Rng::seed_from_u64(99);
        let y = t.dropout(x, 0.3, &mut drng)?;
        project(t, y, 19)
    });
}

#[test]
fn grad_attention_masked_causal_and_cross() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (batch, lq, lk, dim) = (2, 3, 4, 8);
    let q0 = rand_tensor(&mut rng, &[batch * lq, dim]);
    let k0 = rand_tensor(&mut rng, &[batch * lk, dim]);
    let v0 = rand_tensor(&mut rng, &[batch * lk, dim]);
    let cross = AttentionSpec {
        batch,
        q_len: lq,
        k_len: lk,
        heads: 2,
        causal: false,
        key_valid: Some(vec![true, true, true, false, true, true, false, false]),
    };
    for which in 0..3 {
        let x0 = [&q0, &k0, &v0][which].clone();
        let (q0, k0, v0, spec) = (q0.clone(), k0.clone(), v0.clone(), cross.clone());
        check_primitive(x0, move |t, x| {
            let mut ins = [None, None, None];
            ins[which] = Some(x);
            let q = ins[0].unwrap_or_else(|| t.constant(q0.clone()));
            let k = ins[1].unwrap_or_else(|| t.constant(k0.clone()));
            let v = ins[2].unwrap_or_else(|| t.constant(v0.clone()));
            let y = t.attention(q, k, v, spec.clone())?;
            project(t, y, 20)
        });
    }
    let causal = AttentionSpec {
        batch,
        q_len: lk,
        k_len: lk,
        heads: 4,
        causal: true,
        key_valid: None,
    };
    check_primitive(k0, |t, x| {
        let y = t.attention(x, x, x, causal.clone())?;
        project(t, y, 21)
    });
}

#[test]
fn causal_attention_ignores_future_positions() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = rand_tensor(&mut rng, &[4, 4]);
    let mut changed = x.clone();
    changed.data_mut()[12..].iter_mut().for_each(|v| *v += 5.0);
    let spec = AttentionSpec {
        batch: 1,
        q_len: 4,
        k_len: 4,
        heads: 1,
        causal: true,
        key_valid: None,
    };
    let run = |x: &Tensor<f64>| {
        let mut t = Tape::new();
        let v = t.constant(x.clone());
        let y = t.attention(v, v, v, spec.clone()).unwrap();
        t.value(y).data()[..12].to_vec()
    };
    assert_eq!(run(&x), run(&changed));
}

#[test]
fn gradient_check_three_layer_network() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = rand_tensor(&mut rng, &[6, 5]);
    let w1 = rand_tensor(&mut rng, &[5, 8]);
    let w2 = rand_tensor(&mut rng, &[8, 8]);
    let w3 = rand_tensor(&mut rng, &[8, 4]);
    let targets = [Some(0), Some(3), Some(1), None, Some(2), Some(2)];
    let net = |t: &mut Tape<f64>, ws: [Var; 3]| -> Result<Var> {
        let xv = t.constant(x.clone());
        let h = t.matmul(xv, ws[0])?;
        let h = t.relu(h)?;
        let h = t.matmul(h, ws[1])?;
        let h = t.relu(h)?;
        let o = t.matmul(h, ws[2])?;
        t.cross_entropy(o, &targets)
    };
    let mut tape = Tape::new();
    let ws = [
        tape.param("w1", w1.clone()),
        tape.param("w2", w2.clone()),
        tape.param("w3", w3.clone()),
    ];
    let loss = net(&mut tape, ws).unwrap();
    let grads = backprop(&tape, loss).unwrap();
    let all = [w1, w2, w3];
    for (i, name) in ["w1", "w2", "w3"].into_iter().enumerate() {
        let numeric = finite_diff_grad(
            |probe| {
                let mut t = Tape::new();
                let mut vs = [None; 3];
                for (j, w) in all.iter().enumerate() {
                    vs[j] = Some(t.constant(if j == i { probe.clone() } else { w.clone() }));
                }
                let l = net(&mut t, vs.map(Option::unwrap))?;
                Ok(t.value(l).data()[0])
            },
            &all[i],
            1e-5,
        )
        .unwrap();
        let err = rel_err(grads.get(name).unwrap(), &numeric);
        assert!(err <= 1e-4, "{name}: relative error {err}");
    }
}

#[test]
fn finite_diff_examples() {
    let x = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
    let g = finite_diff_grad(|t| Ok(t.data().iter().map(|v| v * v).sum()), &x, 1e-5).unwrap();
    assert!((g.data()[0] - 2.0).abs() < 1e-8 && (g.data()[1] - 4.0).abs() < 1e-8);
    let g = finite_diff_grad(|_| Ok(3.5), &x, 1e-5).unwrap();
    assert_eq!(g.data(), &[0.0, 0.0]);
}

#[test]
fn lr_schedule_examples() {
    let s = LrSchedule::new(3e-4, 4500).unwrap();
    assert!((s.lr_at(4500).unwrap() - 3e-4).abs() < 1e-15);
    assert!((s.lr_at(2250).unwrap() - 1.5e-4).abs() < 1e-15);
    assert!((s.lr_at(18000).unwrap() - 1.5e-4).abs() < 1e-15);
    assert!(matches!(s.lr_at(0), Err(Error::Contract(_))));
}

#[test]
fn lr_schedule_shape() {
    let s = LrSchedule::new(1e-3, 50).unwrap();
    let lrs: Vec<f64> = (1..=400).map(|t| s.lr_at(t).unwrap()).collect();
    assert!(lrs[..50].windows(2).all(|w| w[0] <= w[1]));
    assert!(lrs[49..].windows(2).all(|w| w[0] >= w[1]));
    assert!(lrs.iter().all(|&lr| lr <= 1e-3));
}

#[test]
fn adam_zero_gradient_leaves_param_unchanged() {
    let mut p = Tensor::<f32>::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
    let before = p.clone();
    let mut st = AdamState::new(3);
    adam_step(&mut p, &Tensor::zeros(&[3]), &mut st, 1e-3, None).unwrap();
    assert_eq!(p, before);
    assert_eq!(st.t, 1);
}

#[test]
fn adam_first_step_moves_by_lr_against_gradient() {
    for g in [0.3f64, -2.0, 1e-3] {
        let mut p = Tensor::<f64>::scalar(1.0);
        let mut st = AdamState::new(1);
        adam_step(&mut p, &Tensor::scalar(g), &mut st, 0.01, None).unwrap();
        let delta = p.data()[0] - 1.0;
        assert_eq!(delta.signum(), -g.signum());
        assert!((delta.abs() - 0.01).abs() < 1e-6, "step {delta}");
    }
}

#[test]
fn adam_matches_reference_recurrences_on_quadratic() {
    // f(x) = 0.5 * sum(a_i * (x_i - c_i)^2)
    let a = [1.0, 3.0, 0.2, 10.0];
    let c = [0.5, -1.0, 2.0, 0.1];
    let grad = |x: &[f64]| -> Vec<f64> { (0..4).map(|i| a[i] * (x[i] - c[i])).collect() };
    let lr = 0.05;

    let mut x = Tensor::<f64>::new(vec![4], vec![0.0, 0.0, 0.0, 0.0]).unwrap();
    let mut st = AdamState::new(4);

    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
    let mut rx = [0.0f64; 4];
    let mut m = [0.0f64; 4];
    let mut v = [0.0f64; 4];
    for t in 1..=10 {
        let g = grad(x.data());
        adam_step(&mut x, &Tensor::new(vec![4], g).unwrap(), &mut st, lr, None).unwrap();

        let rg = grad(&rx);
        for i in 0..4 {
            m[i] = b1 * m[i] + (1.0 - b1) * rg[i];
            v[i] = b2 * v[i] + (1.0 - b2) * rg[i] * rg[i];
            let mh = m[i] / (1.0 - b1.powi(t));
            let vh = v[i] / (1.0 - b2.powi(t));
            rx[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
    for i in 0..4 {
        assert!((x.data()[i] - rx[i]).abs() <= 1e-12);
    }
}

#[test]
fn adam_update_mask_freezes_elements_bitwise() {
    let mut p = Tensor::<f32>::new(vec![4], vec![0.1, 0.2, -0.3, 0.0]).unwrap();
    let g = Tensor::new(vec![4], vec![1.0, 1.0, 1.0, 1.0]).unwrap();
    let mut st = AdamState::new(4);
    let mask = [true, false, true, false];
    for _ in 0..5 {
        adam_step(&mut p, &g, &mut st, 0.01, Some(&mask)).unwrap();
    }
    assert_eq!(p.data()[1].to_bits(), 0.2f32.to_bits());
    assert_eq!(p.data()[3].to_bits(), 0.0f32.to_bits());
    assert_ne!(p.data()[0], 0.1);
    assert_eq!(st.m[1], 0.0);
}

#[test]
fn adam_shape_mismatch_is_rejected() {
    let mut p = Tensor::<f32>::zeros(&[3]);
    let mut st = AdamState::new(3);
    assert!(adam_step(&mut p, &Tensor::zeros(&[4]), &mut st, 0.1, None).is_err());
}

#[test]
fn adam_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let p0: Tensor<f32> = Tensor::from_fn(&[64], |_| rng.random_range(-1.0..1.0));
    let g: Tensor<f32> = Tensor::from_fn(&[64], |_| rng.random_range(-1.0..1.0));
    let run = || {
        let mut p = p0.clone();
        let mut st = AdamState::new(64);
        for _ in 0..3 {
            adam_step(&mut p, &g, &mut st, 3e-4, None).unwrap();
        }
        p.into_data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn tensor_shape_contract() {
    assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
    assert!(Tensor::<f32>::new(vec![2, 0], vec![]).is_err());
    let t = Tensor::<f32>::new(vec![2, 3], vec![0.0; 6]).unwrap();
    assert_eq!(t.rows_cols(), (2, 3));
    assert!(t.reshape(&[4]).is_err());
}
