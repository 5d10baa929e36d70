use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numcore::Tensor;
use crate::Error;

fn tiny(vocab: usize) -> ModelConfig {
    ModelConfig {
        num_heads: 2,
        num_encoder_layers: 1,
        num_decoder_layers: 1,
        embed_dim: 8,
        ffn_dim: 16,
        dropout: 0.1,
        vocab_size: vocab,
        max_seq_len: 16,
    }
}

fn store(cfg: &ModelConfig, seed: u64) -> ParamStore<f32> {
    ParamStore::init(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn logits_shape_contract() {
    let cfg = tiny(11);
    let model = Seq2Seq::<f32>::new(cfg.clone()).unwrap();
    let p = store(&cfg, 1);
    let batch = TokenBatch::from_pairs(&[(vec![5u32, 6, 7], vec![8u32])]).unwrap();
    let logits = model.logits(&p, &batch).unwrap();
    assert_eq!(logits.shape(), &[1, 2, 11]);
}

#[test]
fn zero_weights_make_logits_source_independent() {
    let cfg = tiny(11);
    let model = Seq2Seq::<f32>::new(cfg.clone()).unwrap();
    let mut p = store(&cfg, 2);
    for e in p.entries_mut() {
        if !e.name.starts_with("embed.") {
            e.tensor.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }
    let a = TokenBatch::from_pairs(&[(vec![5u32, 6, 7], vec![8u32, 9])]).unwrap();
    let b = TokenBatch::from_pairs(&[(vec![10u32, 3, 4], vec![8u32, 9])]).unwrap();
    assert_eq!(model.logits(&p, &a).unwrap(), model.logits(&p, &b).unwrap());
}

#[test]
fn eval_forward_is_bitwise_deterministic() {
    let cfg = tiny(11);
    let model = Seq2Seq::<f32>::new(cfg.clone()).unwrap();
    let p = store(&cfg, 3);
    let batch =
        TokenBatch::from_pairs(&[(vec![5u32, 6, 7], vec![8u32, 9]), (vec![4u32], vec![3u32, 3, 3])])
            .unwrap();
    let bits = |t: Tensor<f32>| t.into_data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(model.logits(&p, &batch).unwrap()), bits(model.logits(&p, &batch).unwrap()));
}

#[test]
fn padding_does_not_change_real_positions() {
    let cfg = tiny(11);
    let model = Seq2Seq::<f64>::new(cfg.clone()).unwrap();
    let p = store(&cfg, 4).cast::<f64>();
    let alone = TokenBatch::from_pairs(&[(vec![5u32, 6], vec![8u32])]).unwrap();
    let padded =
        TokenBatch::from_pairs(&[(vec![5u32, 6], vec![8u32]), (vec![4u32, 4, 4, 4], vec![3u32, 3, 3])])
            .unwrap();
    let a = model.logits(&p, &alone).unwrap();
    let b = model.logits(&p, &padded).unwrap();
    for (x, y) in a.data().iter().zip(&b.data()[..11 * 2]) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn out_of_range_tokens_are_rejected() {
    let cfg = tiny(11);
    let model = Seq2Seq::<f32>::new(cfg.clone()).unwrap();
    let p = store(&cfg, 5);
    let batch = TokenBatch::from_pairs(&[(vec![5u32, 11], vec![8u32])]).unwrap();
    assert!(matches!(model.logits(&p, &batch), Err(Error::InvalidInput(_))));
    let long = TokenBatch::from_pairs(&[(vec![5u32; 17], vec![8u32])]).unwrap();
    assert!(matches!(model.logits(&p, &long), Err(Error::InvalidInput(_))));
}

#[test]
fn greedy_decode_length_and_determinism() {
    let cfg = tiny(11);
    let model = Seq2Seq::<f32>::new(cfg.clone()).unwrap();
    let p = store(&cfg, 6);
    let srcs = vec![vec![9u32, 4, 5, 6], vec![10u32, 7]];
    let one = model.greedy_decode(&p, &srcs, 1).unwrap();
    assert!(one.iter().all(|o| o.len() == 1));
    let a = model.greedy_decode(&p, &srcs, 8).unwrap();
    let b = model.greedy_decode(&p, &srcs, 8).unwrap();
    assert_eq!(a, b);
    for out in &a {
        assert!(out.len() <= 8);
        let eos = out.iter().position(|&t| t == EOS_ID);
        assert!(eos.is_none() || eos == Some(out.len() - 1));
    }
}

#[test]
fn batched_decode_matches_single_decode() {
    let cfg = tiny(11);
    let model = Seq2Seq::<f32>::new(cfg.clone()).unwrap();
    let p = store(&cfg, 7);
    let srcs = vec![vec![9u32, 4, 5, 6], vec![10u32, 7], vec![9u32, 3, 3, 8, 8, 4]];
    let batched = model.greedy_decode(&p, &srcs, 6).unwrap();
    for (s, out) in srcs.iter().zip(&batched) {
        assert_eq!(&model.greedy_decode(&p, std::slice::from_ref(s), 6).unwrap()[0], out);
    }
}

#[test]
fn argmax_breaks_ties_low() {
    assert_eq!(argmax(&[0.5f32, 2.0, 2.0, 1.0]), 1);
    assert_eq!(argmax(&[1.0f32, 1.0]), 0);
}

/// Closed-form element counts, written independently of `parameter_layout`.
fn formula(d: usize, f: usize, v: usize, enc: usize, dec: usize) -> (usize, usize) {
    let attn = 4 * (d * d + d);
    let ffn = d * f + f + f * d + d;
    let norm = 2 * d;
    let enc_layer = attn + ffn + 2 * norm;
    let dec_layer = 2 * attn + ffn + 3 * norm;
    let total = v * d + enc * enc_layer + dec * dec_layer + 2 * norm + d * v + v;
    let prunable = enc * (4 * d * d + 2 * d * f) + dec * (8 * d * d + 2 * d * f) + d * v;
    (total, prunable)
}

#[test]
fn census_matches_closed_form_on_desk_config() {
    let mut cfg = ModelConfig::desk(64);
    cfg.dropout = 0.1;
    let p = store(&cfg, 8);
    let c = param_census(&p);
    let (total, prunable) = formula(64, 128, 64, 2, 2);
    assert_eq!((c.total, c.prunable), (total, prunable));
    assert_eq!(c.total, 175_936);
    assert_eq!(c.embedding, 64 * 64);
    assert_eq!(c.total, c.prunable + c.embedding + c.bias_and_norm);
    assert_eq!(c.rows.len(), p.len());
}

#[test]
fn census_of_layerless_model_covers_only_output_projection() {
    let mut cfg = ModelConfig::desk(20);
    cfg.num_encoder_layers = 0;
    cfg.num_decoder_layers = 0;
    let c = param_census(&store(&cfg, 9));
    assert_eq!(c.prunable, 64 * 20);
    let prunable: Vec<_> = c.rows.iter().filter(|r| r.prunable).map(|r| r.name.as_str()).collect();
    assert_eq!(prunable, ["output.weight"]);
}

#[test]
fn bias_and_norm_share_is_below_one_percent_at_paper_scale() {
    let cfg = ModelConfig::paper(40_000);
    let layout = parameter_layout(&cfg);
    let count = |keep: &dyn Fn(&str) -> bool| -> usize {
        layout
            .iter()
            .filter(|(n, _)| keep(n))
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    };
    let non_embedding = count(&|n| !n.starts_with("embed."));
    let bias_norm = count(&|n| !n.starts_with("embed.") && !is_prunable_name(n));
    let share = bias_norm as f64 / non_embedding as f64;
    assert!(share < 0.01, "share {share}");
    assert_eq!(
        formula(512, 2048, 40_000, 6, 6).0,
        count(&|_| true),
        "layout agrees with closed form at paper scale"
    );
}

#[test]
fn prunable_partition_follows_name_rule() {
    let p = store(&ModelConfig::desk(30), 10);
    for e in p.iter() {
        let is_matrix = e.tensor.shape().len() == 2;
        let expect = is_matrix && e.name != "embed.tokens";
        assert_eq!(e.prunable, expect, "{}", e.name);
    }
}

#[test]
fn head_divisibility_is_validated() {
    let mut cfg = ModelConfig::desk(30);
    cfg.num_heads = 5;
    assert!(matches!(Seq2Seq::<f32>::new(cfg), Err(Error::Config(_))));
}
