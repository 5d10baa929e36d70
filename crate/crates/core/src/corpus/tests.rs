use std::collections::HashSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::Error;

fn small_config() -> CorpusConfig {
    CorpusConfig {
        pair_sizes: vec![60, 30, 20],
        dev_size: 10,
        test_size: 10,
        multiway_size: 5,
        ..CorpusConfig::desk()
    }
}

fn vocab() -> Vocab {
    Vocab::new(10, vec!["en".into(), "l1".into(), "l2".into()]).unwrap()
}

#[test]
fn control_tokens_sit_in_a_contiguous_block_above_content() {
    let v = vocab();
    assert_eq!(v.size(), 3 + 10 + 3);
    assert_eq!(v.content_range(), 3..13);
    assert_eq!(v.control_range(), 13..16);
    assert_eq!(v.control_id("l2").unwrap(), 15);
    assert_eq!(v.token_text(15), "<2l2>");
}

#[test]
fn encode_prepends_control_and_decode_strips_it() {
    let v = vocab();
    let a = v.encode(&["w3", "w0", "w9"], "l1").unwrap();
    let b = v.encode(&["w3", "w0", "w9"], "en").unwrap();
    assert_eq!(a, vec![14, 6, 3, 12]);
    assert_eq!(a[1..], b[1..]);
    assert_ne!(a[0], b[0]);
    assert_eq!(v.decode(&a).unwrap(), ["w3", "w0", "w9"]);
}

#[test]
fn unknown_tokens_and_languages_are_rejected() {
    let v = vocab();
    assert!(matches!(v.encode(&["w10"], "en"), Err(Error::InvalidInput(_))));
    assert!(matches!(v.encode(&["<2en>"], "en"), Err(Error::InvalidInput(_))));
    assert!(matches!(v.encode(&["w1"], "de"), Err(Error::InvalidInput(_))));
    assert!(matches!(v.decode(&[16]), Err(Error::InvalidInput(_))));
}

proptest! {
    #[test]
    fn decode_inverts_encode(s in prop::collection::vec(0u32..10, 0..20), lang in 0usize..3) {
        let v = vocab();
        let text: Vec<String> = s.iter().map(|i| format!("w{i}")).collect();
        let ids = v.encode(&text, &v.languages()[lang].clone()).unwrap();
        prop_assert_eq!(v.decode(&ids).unwrap(), text);
    }

    #[test]
    fn rendering_is_invertible(
        seed in any::<u64>(),
        fraction in 0.0f64..=1.0,
        window in 1usize..5,
        s in prop::collection::vec(0u32..16, 0..20),
    ) {
        let c = Cipher::partial(16, fraction, 16, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let spec = LanguageSpec::new("x", c, window, 1).unwrap();
        let out = spec.render(&s);
        prop_assert!(out.iter().all(|&t| (16..32).contains(&t)));
        prop_assert_eq!(spec.unrender(&out).unwrap(), s);
    }
}

#[test]
fn non_bijective_ciphers_are_rejected() {
    assert!(Cipher::new(vec![0, 0, 1], 0).is_err());
    assert!(Cipher::new(vec![0, 3, 1], 0).is_err());
    assert!(Cipher::new(vec![], 0).is_err());
    let c = Cipher::new(vec![2, 0, 1], 0).unwrap();
    assert_eq!(c.inverted().apply(&c.apply(&[0, 1, 2])), vec![0, 1, 2]);
}

#[test]
fn partial_cipher_moves_at_most_the_chosen_fraction() {
    let c = Cipher::partial(64, 0.5, 0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let moved = (0..64u32).filter(|&i| c.apply(&[i])[0] != i).count();
    assert!(moved <= 32 && moved > 16, "moved {moved}");
}

#[test]
fn identity_language_is_a_copy_task() {
    let spec = LanguageSpec::new("x", Cipher::identity(8, 0), 1, 1).unwrap();
    let base = vec![vec![3u32, 1, 4, 1, 5], vec![7u32]];
    for (en, xx) in gen_language(&spec, &Cipher::identity(8, 0), &base).unwrap() {
        assert_eq!(en, xx);
    }
}

#[test]
fn windowed_reversal_leaves_partial_tail() {
    assert_eq!(reorder(&[1, 2, 3, 4, 5, 6, 7], 3), vec![3, 2, 1, 6, 5, 4, 7]);
    assert_eq!(reorder(&[1, 2, 3], 1), vec![1, 2, 3]);
    assert_eq!(reorder(&[1, 2, 3, 4, 5], 2), vec![2, 1, 4, 3, 5]);
}

#[test]
fn generation_is_deterministic_and_seed_sensitive() {
    let a = ParallelCorpus::generate(&small_config(), 9).unwrap();
    let b = ParallelCorpus::generate(&small_config(), 9).unwrap();
    let c = ParallelCorpus::generate(&small_config(), 10).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.pairs, c.pairs);
}

#[test]
fn splits_are_disjoint_and_ids_valid() {
    let c = ParallelCorpus::generate(&small_config(), 3).unwrap();
    assert_eq!(c.sizes(), vec![60, 30, 20]);
    for (k, p) in c.pairs.iter().enumerate() {
        let mut seen = HashSet::new();
        for split in Split::ALL {
            for sp in p.split(split) {
                assert!(seen.insert(sp.clone()), "pair {k} repeats a sentence across splits");
            }
            for e in c.examples(k, split) {
                assert!(c.vocab.control_range().contains(&e.src[0]));
                assert!(e.src.iter().chain(&e.tgt).all(|&t| (t as usize) < c.vocab.size()));
                assert!(e.src[1..].iter().chain(&e.tgt).all(|&t| c.vocab.is_content(t)));
                assert!((4..=16).contains(&e.tgt.len()));
            }
        }
    }
}

#[test]
fn targets_are_the_rendered_sources() {
    let c = ParallelCorpus::generate(&small_config(), 4).unwrap();
    let off = c.vocab.content_range().start;
    for (k, p) in c.pairs.iter().enumerate() {
        let spec = &c.languages[k + 1];
        for sp in &p.dev {
            let en: Vec<u32> = sp.en.iter().map(|t| t - off).collect();
            let xx: Vec<u32> = sp.xx.iter().map(|t| t - off).collect();
            assert_eq!(spec.render(&en), xx);
            assert_eq!(spec.unrender(&xx).unwrap(), en);
        }
    }
}

#[test]
fn disjoint_mode_separates_content_blocks() {
    let cfg = CorpusConfig {
        mode: ConflictMode::Disjoint,
        ..small_config()
    };
    let c = ParallelCorpus::generate(&cfg, 4).unwrap();
    assert_eq!(c.vocab.content_size(), 64 * 4);
    for (k, p) in c.pairs.iter().enumerate() {
        let lo = 3 + 64 * (k as u32 + 1);
        assert!(p.train.iter().flat_map(|s| &s.xx).all(|&t| (lo..lo + 64).contains(&t)));
        assert!(p.train.iter().flat_map(|s| &s.en).all(|&t| t < 3 + 64));
    }
}

#[test]
fn eight_pairs_give_56_zero_shot_directions() {
    let cfg = CorpusConfig {
        pair_sizes: vec![5; 8],
        dev_size: 2,
        test_size: 2,
        ..CorpusConfig::desk()
    };
    let c = ParallelCorpus::generate(&cfg, 1).unwrap();
    let dirs = c.zero_shot_directions();
    assert_eq!(dirs.len(), 56);
    assert!(dirs.iter().all(|(a, b)| a != b && a != ENGLISH && b != ENGLISH));
    let ex = c.zero_shot_examples("l3", "l5").unwrap();
    assert_eq!(ex.len(), 50);
    assert_eq!(ex[0].src[0], c.vocab.control_id("l5").unwrap());
    assert!(c.zero_shot_examples("l3", "zz").is_err());
    // the last two ciphers compose to the identity
    let (a, b) = (&c.languages[7].cipher, &c.languages[8].cipher);
    let all: Vec<u32> = (0..64).collect();
    assert_eq!(b.apply(&a.apply(&all)), all);
}

#[test]
fn invalid_corpus_configs_are_rejected() {
    let bad = [
        CorpusConfig {
            pair_sizes: vec![],
            ..small_config()
        },
        CorpusConfig {
            pair_sizes: vec![3, 0],
            ..small_config()
        },
        CorpusConfig {
            min_len: 5,
            max_len: 4,
            ..small_config()
        },
        CorpusConfig {
            cipher_fraction: 1.5,
            ..small_config()
        },
    ];
    for cfg in bad {
        assert!(matches!(ParallelCorpus::generate(&cfg, 1), Err(Error::Config(_))));
    }
    let tiny = CorpusConfig {
        base_vocab: 2,
        min_len: 1,
        max_len: 1,
        ..small_config()
    };
    assert!(matches!(ParallelCorpus::generate(&tiny, 1), Err(Error::Config(_))));
}

#[test]
fn temperature_weight_examples() {
    assert_eq!(temperature_weights(&[100, 100], 5.0).unwrap(), vec![0.5, 0.5]);
    let w = temperature_weights(&[300, 100], 1.0).unwrap();
    assert!((w[0] - 0.75).abs() < 1e-15 && (w[1] - 0.25).abs() < 1e-15);
    let w = temperature_weights(&[214_000, 4500], 5.0).unwrap();
    // direct evaluation of the formula
    let (a, b) = (214_000f64 / 218_500.0, 4500f64 / 218_500.0);
    let (a, b) = (a.powf(0.2), b.powf(0.2));
    assert!((w[0] - a / (a + b)).abs() < 1e-12);
    assert!((w[0] - 0.684).abs() < 5e-4 && (w[1] - 0.316).abs() < 5e-4);
    assert!(matches!(temperature_weights(&[1], 0.0), Err(Error::Contract(_))));
    assert!(matches!(temperature_weights(&[1], -1.0), Err(Error::Contract(_))));
    assert!(temperature_weights(&[], 5.0).is_err());
}

fn variance(w: &[f64]) -> f64 {
    let m = w.iter().sum::<f64>() / w.len() as f64;
    w.iter().map(|x| (x - m).powi(2)).sum::<f64>() / w.len() as f64
}

proptest! {
    #[test]
    fn temperature_weights_form_a_flattening_distribution(
        sizes in prop::collection::vec(1usize..100_000, 1..10),
        t in 0.1f64..20.0,
        dt in 0.0f64..20.0,
    ) {
        let w = temperature_weights(&sizes, t).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(w.iter().all(|&x| x > 0.0));
        let hot = temperature_weights(&sizes, t + dt).unwrap();
        prop_assert!(variance(&hot) <= variance(&w) + 1e-15);
        let limit = temperature_weights(&sizes, 1e6).unwrap();
        let uniform = 1.0 / sizes.len() as f64;
        prop_assert!(limit.iter().all(|x| (x - uniform).abs() < 1e-3));
    }
}

fn pool(n: usize, len: usize) -> Vec<Example> {
    (0..n)
        .map(|i| Example {
            src: vec![3 + (i % 5) as u32; len],
            tgt: vec![4; len - 1],
        })
        .collect()
}

#[test]
fn single_pool_feeds_every_batch() {
    let p = pool(50, 6);
    let s = BatchSampler::new(&[&p], &[1.0], 60, ChaCha8Rng::seed_from_u64(1)).unwrap();
    for b in s.take(20) {
        assert!(b.iter().all(|&(k, i)| k == 0 && i < 50));
        assert_eq!(b.len(), 10);
    }
}

#[test]
fn budget_of_one_sequence_gives_singleton_batches() {
    let p = pool(10, 7);
    let s = BatchSampler::new(&[&p], &[1.0], 7, ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert!(s.take(100).all(|b| b.len() == 1));
}

#[test]
fn oversized_sequences_are_rejected_at_ingestion() {
    let p = pool(10, 9);
    assert!(matches!(
        BatchSampler::new(&[&p], &[1.0], 8, ChaCha8Rng::seed_from_u64(1)),
        Err(Error::InvalidInput(_))
    ));
}

#[test]
fn batches_respect_the_budget_and_are_deterministic() {
    let c = ParallelCorpus::generate(&small_config(), 5).unwrap();
    let pools: Vec<Vec<Example>> = (0..3).map(|k| c.examples(k, Split::Train)).collect();
    let refs: Vec<&[Example]> = pools.iter().map(|p| p.as_slice()).collect();
    let w = temperature_weights(&c.sizes(), 5.0).unwrap();
    let run = || -> Vec<Batch> {
        BatchSampler::new(&refs, &w, 128, ChaCha8Rng::seed_from_u64(2)).unwrap().take(300).collect()
    };
    let a = run();
    assert_eq!(a, run());
    for b in &a {
        let widest = b.iter().map(|&(k, i)| example_cost(&pools[k][i])).max().unwrap();
        assert!(b.len() * widest <= 128);
    }
}

#[test]
fn empirical_pair_frequencies_follow_temperature_weights() {
    let (big, small) = (pool(8000, 5), pool(500, 5));
    let w = temperature_weights(&[8000, 500], 5.0).unwrap();
    let s = BatchSampler::new(&[&big, &small], &w, 50, ChaCha8Rng::seed_from_u64(11)).unwrap();
    let mut counts = [0usize; 2];
    for b in s.take(10_000) {
        for (k, _) in b {
            counts[k] += 1;
        }
    }
    let total = (counts[0] + counts[1]) as f64;
    for k in 0..2 {
        let f = counts[k] as f64 / total;
        assert!((f - w[k]).abs() <= 0.02, "pair {k}: {f} vs {}", w[k]);
    }
}

#[test]
fn corpus_files_round_trip_byte_identically() {
    let c = ParallelCorpus::generate(&small_config(), 6).unwrap();
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    c.write_dir(d1.path()).unwrap();
    let back = ParallelCorpus::read_dir(d1.path()).unwrap();
    assert_eq!(back, c);
    back.write_dir(d2.path()).unwrap();
    for entry in std::fs::read_dir(d1.path()).unwrap() {
        let name = entry.unwrap().file_name();
        let a = std::fs::read(d1.path().join(&name)).unwrap();
        let b = std::fs::read(d2.path().join(&name)).unwrap();
        assert_eq!(a, b, "{name:?}");
    }
    let first = d1.path().join(direction_file(Split::Dev, "en", "l2"));
    let text = std::fs::read_to_string(&first).unwrap();
    assert!(text.lines().all(|l| l.split('\t').count() == 2));
}

#[test]
fn tampered_corpus_files_are_rejected() {
    let c = ParallelCorpus::generate(&small_config(), 6).unwrap();
    let d = tempfile::tempdir().unwrap();
    c.write_dir(d.path()).unwrap();
    let f = d.path().join(direction_file(Split::Train, "l1", "en"));
    let text = std::fs::read_to_string(&f).unwrap();
    std::fs::write(&f, text.replacen('\t', "\t999 ", 1)).unwrap();
    assert!(ParallelCorpus::read_dir(d.path()).is_err());
}
