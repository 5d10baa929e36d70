use super::*;
use crate::eval::{pair_view, stability_check, zero_shot_view};
use crate::model::ParamStore;
use crate::packing::{CapacityReport, OwnershipMask, FREE, SHARED};
use crate::testkit::{tiny_corpus, trained, trainer};
use crate::Error;

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

/// Prunable elements owned outside `trainable`, and every non-prunable
/// parameter, must be bitwise equal.
fn assert_frozen(a: &ParamStore<f32>, b: &ParamStore<f32>, mask: &OwnershipMask, trainable: &[u8]) {
    for (x, y) in a.iter().zip(b.iter()) {
        match mask.owners(&x.name) {
            Some(owners) => {
                for ((p, q), o) in x.tensor.data().iter().zip(y.tensor.data()).zip(owners) {
                    if !trainable.contains(o) {
                        assert_eq!(p.to_bits(), q.to_bits(), "{} owner {o} moved", x.name);
                    }
                }
            }
            None => assert_eq!(x.tensor, y.tensor, "{} moved", x.name),
        }
    }
}

#[test]
fn zero_epochs_leave_parameters_unchanged() {
    let corpus = tiny_corpus();
    let t = trainer(&corpus, 1);
    let mut ck = t.init_checkpoint(serde_json::Value::Null, 2).unwrap();
    let before = ck.params.clone();
    let rec = t.train_multilingual(&mut ck, 0).unwrap();
    assert_eq!(ck.params, before);
    assert_eq!(rec.steps, 0);
    let ft = t.full_finetune_baseline(&ck, "l1", 0).unwrap();
    assert_eq!(ft.params, before);
}

#[test]
fn multilingual_training_lowers_dev_loss() {
    let corpus = tiny_corpus();
    let t = trainer(&corpus, 2);
    let ck = trained(&t, 4);
    let rec = &ck.log[0];
    assert!(rec.steps > 0 && rec.examples >= 4 * 2 * 96);
    for (lang, after) in &rec.dev_loss {
        assert!(*after < rec.dev_loss_before[lang], "{lang}: {after} vs {}", rec.dev_loss_before[lang]);
    }
}

#[test]
fn base_pruning_frees_the_requested_share() {
    let corpus = tiny_corpus();
    let t = trainer(&corpus, 3);
    let parent = trained(&t, 1);

    let mut zero = parent.clone();
    t.base_prune_retrain(&mut zero, 0.0, 0).unwrap();
    assert_eq!(zero.params, parent.params);
    assert!(zero.mask.as_ref().unwrap().histogram().keys().all(|&o| o == SHARED));

    let mut half = parent.clone();
    let rec = t.base_prune_retrain(&mut half, 0.5, 1).unwrap();
    let cap = CapacityReport::from_mask(half.mask.as_ref().unwrap());
    assert!(cap.max_tensor_deviation(FREE, 0.5) <= 1.0);
    half.mask.as_ref().unwrap().check_free_zero(&half.params).unwrap();
    for (lang, after) in &rec.dev_loss {
        assert!(*after <= rec.dev_loss_before[lang] + 1e-9, "{lang}");
    }

    let mut bad = parent.clone();
    assert!(matches!(t.base_prune_retrain(&mut bad, 1.0, 0), Err(Error::Config(_))));
    assert_eq!(bad, parent);
}

#[test]
fn adaptation_freezes_everything_but_its_own_weights() {
    let corpus = tiny_corpus();
    let t = trainer(&corpus, 4);
    let mut ck = trained(&t, 1);
    t.base_prune_retrain(&mut ck, 0.5, 1).unwrap();
    let pruned = ck.clone();

    t.adapt_pair(&mut ck, "l1", 2, 0.75, 1).unwrap();
    let mask = ck.mask.clone().unwrap();
    assert_frozen(&pruned.params, &ck.params, &mask, &[FREE, 2]);
    let cap = CapacityReport::from_mask(&mask);
    assert!(cap.max_tensor_deviation(2, 0.125) <= 1.0, "{}", cap.max_tensor_deviation(2, 0.125));
    mask.check_free_zero(&ck.params).unwrap();
    let after_one = ck.clone();

    t.adapt_pair(&mut ck, "l3", 1, 0.75, 1).unwrap();
    assert_frozen(&after_one.params, &ck.params, ck.mask.as_ref().unwrap(), &[FREE, 3]);
    assert_eq!(ck.order, names(&["l1", "l3"]));

    let model = t.model();
    let report = stability_check(model, &after_one, &ck).unwrap();
    assert!(report.passed(), "{report:?}");
    assert_eq!(report.checks.len(), 2);
    assert!(stability_check(model, &pruned, &ck).unwrap().passed());
    assert_eq!(zero_shot_view(&pruned).unwrap(), zero_shot_view(&ck).unwrap());

    let mut corrupt = ck.clone();
    let m = corrupt.mask.as_ref().unwrap();
    let name = m.names().next().unwrap().to_string();
    let idx = m.owners(&name).unwrap().iter().position(|&x| x == SHARED).unwrap();
    corrupt.params.get_mut(&name).unwrap().data_mut()[idx] += 0.5;
    let bad = stability_check(model, &after_one, &corrupt).unwrap();
    assert!(!bad.passed());
    assert!(bad.max_deviation() > 0.0);
}

#[test]
fn adaptation_preconditions() {
    let corpus = tiny_corpus();
    let t = trainer(&corpus, 5);
    let mut ck = trained(&t, 0);
    assert!(matches!(t.pair_adapt(&mut ck, "l1", 1), Err(Error::Contract(_))));
    assert!(t.pair_adapt(&mut ck.clone(), "en", 1).is_err());

    let mut full = ck.clone();
    t.base_prune_retrain(&mut full, 0.0, 0).unwrap();
    assert!(matches!(t.pair_adapt(&mut full, "l1", 1), Err(Error::Capacity(_))));

    t.base_prune_retrain(&mut ck, 0.5, 0).unwrap();
    assert!(matches!(t.pair_prune_retrain(&mut ck, "l1", 0.5, 0), Err(Error::Contract(_))));
    t.pair_adapt(&mut ck, "l2", 0).unwrap();
    assert!(matches!(t.pair_adapt(&mut ck, "l1", 0), Err(Error::Contract(_))));
    assert!(matches!(t.pair_prune_retrain(&mut ck, "l2", 1.0, 0), Err(Error::Config(_))));
    t.pair_prune_retrain(&mut ck, "l2", 0.0, 0).unwrap();
    assert!(matches!(t.pair_adapt(&mut ck, "l2", 0), Err(Error::Contract(_))));
}

#[test]
fn adapted_view_matches_shared_view_for_unadapted_pairs() {
    let corpus = tiny_corpus();
    let t = trainer(&corpus, 6);
    let mut ck = trained(&t, 0);
    t.base_prune_retrain(&mut ck, 0.5, 0).unwrap();
    t.adapt_pair(&mut ck, "l2", 1, 0.5, 0).unwrap();
    assert_eq!(pair_view(&ck, "l1").unwrap(), zero_shot_view(&ck).unwrap());
    assert_ne!(pair_view(&ck, "l2").unwrap(), zero_shot_view(&ck).unwrap());
}

fn epochs() -> EpochPlan {
    EpochPlan {
        multilingual: 1,
        base_retrain: 1,
        pair_adapt: 1,
        pair_retrain: 1,
        finetune_baseline: 1,
    }
}

#[test]
fn interrupted_runs_resume_to_the_same_checkpoint() {
    let corpus = tiny_corpus();
    let t = trainer(&corpus, 8);
    let order = names(&["l2", "l1"]);
    let plan = PhasePlan::full(&order, 0.5, &[0.75, 0.75], &epochs()).unwrap();
    let fresh = t.init_checkpoint(serde_json::Value::Null, 3).unwrap();

    let mut straight = fresh.clone();
    let mut seen = Vec::new();
    t.run_plan(&mut straight, &plan, |rec, _| {
        seen.push(rec.phase.label());
        Ok(())
    })
    .unwrap();
    assert_eq!(seen.len(), 6);

    for stop in [1usize, 3, 4] {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.ckpt");
        let mut ck = fresh.clone();
        let mut n = 0;
        let r = t.run_plan(&mut ck, &plan, |_, ck| {
            n += 1;
            ck.save(&path)?;
            if n == stop {
                Err(Error::Contract("interrupt".into()))
            } else {
                Ok(())
            }
        });
        assert!(r.is_err());
        let mut resumed = Checkpoint::load(&path).unwrap();
        t.run_plan(&mut resumed, &plan, |_, _| Ok(())).unwrap();
        assert_eq!(resumed.to_bytes().unwrap(), straight.to_bytes().unwrap(), "stop after {stop}");
    }

    let other = PhasePlan::full(&order, 0.4, &[0.75, 0.75], &epochs()).unwrap();
    let mut ck = straight.clone();
    assert!(matches!(t.run_plan(&mut ck, &other, |_, _| Ok(())), Err(Error::Contract(_))));
}

#[test]
fn sequence_reports_capacity_after_each_pair() {
    let corpus = tiny_corpus();
    let t = trainer(&corpus, 9);
    let mut ck = trained(&t, 0);
    t.base_prune_retrain(&mut ck, 0.5, 0).unwrap();
    let mut caps = Vec::new();
    let order = names(&["l1", "l2", "l3"]);
    t.adapt_sequence(&mut ck, &order, &[0.75; 3], &epochs(), |_, _, cap| {
        if let Some(c) = cap {
            caps.push(c.clone());
        }
        Ok(())
    })
    .unwrap();
    assert_eq!(caps.len(), 3);
    for (k, cap) in caps.iter().enumerate() {
        let expected = crate::packing::capacity_schedule(0.5, 0.75, k + 1).unwrap();
        assert!(cap.max_tensor_deviation(k as u8 + 2, expected) <= 1.0);
    }
}

#[test]
fn plans_reject_bad_orderings() {
    let langs = names(&["l1", "l2"]);
    let e = epochs();
    let ok = PhasePlan::full(&langs, 0.5, &[0.75, 0.75], &e).unwrap();
    ok.validate(&langs).unwrap();
    let mut swapped = ok.clone();
    swapped.phases.swap(2, 3);
    assert!(swapped.validate(&langs).is_err());
    let mut twice = ok.clone();
    twice.phases.insert(2, ok.phases[1].clone());
    assert!(twice.validate(&langs).is_err());
    let bad_ratio = PhasePlan::full(&langs, 1.0, &[0.75, 0.75], &e).unwrap();
    assert!(matches!(bad_ratio.validate(&langs), Err(Error::Config(_))));
    let unknown = PhasePlan::adaptation(&names(&["l9"]), &[0.5], &e).unwrap();
    assert!(matches!(unknown.validate(&langs), Err(Error::Config(_))));
}

#[test]
fn checkpoints_round_trip_bitwise() {
    let corpus = tiny_corpus();
    let t = trainer(&corpus, 10);
    let mut ck = trained(&t, 1);
    t.base_prune_retrain(&mut ck, 0.5, 0).unwrap();
    t.adapt_pair(&mut ck, "l1", 1, 0.75, 0).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.ckpt");
    ck.save(&a).unwrap();
    let loaded = Checkpoint::load(&a).unwrap();
    assert_eq!(loaded, ck);
    let b = dir.path().join("b.ckpt");
    loaded.save(&b).unwrap();
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());

    let m = t.model();
    let batch = crate::model::TokenBatch::from_pairs(&[(vec![13u32, 4, 5, 6], vec![7u32, 8])]).unwrap();
    let x = m.logits(&zero_shot_view(&ck).unwrap(), &batch).unwrap();
    let y = m.logits(&zero_shot_view(&loaded).unwrap(), &batch).unwrap();
    assert!(x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()));

    for cut in [0, 10, 19, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Checkpoint(_))), "cut {cut}");
    }
    let mut flipped = bytes.clone();
    let last = flipped.len() - 1;
    flipped[last] ^= 0x40;
    let e = Checkpoint::from_bytes(&flipped).unwrap_err();
    assert!(e.to_string().contains("checksum"), "{e}");
    let mut padded = bytes.clone();
    padded.push(0);
    assert!(Checkpoint::from_bytes(&padded).is_err());
    std::fs::write(&a, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(Checkpoint::load(&a), Err(Error::Checkpoint(_))));
}

#[test]
fn finetune_baseline_is_a_separate_unmasked_model() {
    let corpus = tiny_corpus();
    let t = trainer(&corpus, 11);
    let parent = trained(&t, 1);
    let ft = t.full_finetune_baseline(&parent, "l3", 2).unwrap();
    assert!(ft.mask.is_none());
    assert_ne!(ft.params, parent.params);
    let rec = ft.log.last().unwrap();
    assert_eq!(rec.phase.kind, PhaseKind::FullFinetuneBaseline);
    assert!(rec.dev_loss["l3"] <= rec.dev_loss_before["l3"]);
    let mut pruned = parent.clone();
    t.base_prune_retrain(&mut pruned, 0.5, 0).unwrap();
    assert!(t.full_finetune_baseline(&pruned, "l3", 1).is_err());
}
