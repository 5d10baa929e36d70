//! Interference on the synthetic corpus: languages that share a target
//! vocabulary under different ciphers compete for one model's capacity.

use prunepack::corpus::{ConflictMode, CorpusConfig, ParallelCorpus, SamplerConfig, Split};
use prunepack::eval::{mean_loss, zero_shot_eval};
use prunepack::model::ModelConfig;
use prunepack::pipeline::{TrainSettings, Trainer};

fn corpus(mode: ConflictMode) -> ParallelCorpus {
    let cfg = CorpusConfig {
        pair_sizes: vec![160, 160],
        base_vocab: 12,
        min_len: 3,
        max_len: 6,
        dev_size: 40,
        test_size: 8,
        multiway_size: 30,
        cipher_fraction: 1.0,
        mode,
    };
    ParallelCorpus::generate(&cfg, 21).unwrap()
}

fn trainer(c: &ParallelCorpus) -> Trainer<'_> {
    let model = ModelConfig {
        num_heads: 2,
        num_encoder_layers: 1,
        num_decoder_layers: 1,
        embed_dim: 8,
        ffn_dim: 16,
        dropout: 0.0,
        vocab_size: c.vocab.size(),
        max_seq_len: 12,
    };
    let settings = TrainSettings {
        lr: 1e-2,
        warmup_steps: 10,
        free_init_scale: 0.1,
        min_phase_examples: 0,
    };
    let sampler = SamplerConfig {
        temperature: 1.0,
        max_tokens: 64,
    };
    Trainer::new(c, model, settings, sampler, 5).unwrap()
}

#[test]
fn joint_training_loses_to_separate_training_on_some_pair() {
    let c = corpus(ConflictMode::Conflict);
    let t = trainer(&c);
    let init = t.init_checkpoint(serde_json::json!({}), 2).unwrap();
    let epochs = 80;

    let mut joint = init.clone();
    t.train_multilingual(&mut joint, epochs).unwrap();
    let mut worse = 0;
    for (k, p) in c.pairs.iter().enumerate() {
        let dev = c.examples(k, Split::Dev);
        // Same number of examples of this pair as the joint run drew for it.
        let alone = t.full_finetune_baseline(&init, &p.lang, epochs).unwrap();
        let (j, s) = (
            mean_loss(t.model(), &joint.params, &dev).unwrap(),
            mean_loss(t.model(), &alone.params, &dev).unwrap(),
        );
        println!("{}: joint {j:.4} separate {s:.4}", p.lang);
        if j > s {
            worse += 1;
        }
    }
    assert!(worse >= 1, "joint training matched separate training on every pair");
}

#[test]
fn zero_shot_between_inverse_ciphers_beats_an_untrained_model() {
    let c = corpus(ConflictMode::Conflict);
    let t = trainer(&c);
    let init = t.init_checkpoint(serde_json::json!({}), 2).unwrap();
    let mut ck = init.clone();
    t.train_multilingual(&mut ck, 20).unwrap();
    let (floor, _) = zero_shot_eval(t.model(), &init, &c, "l1", "l2", 12).unwrap();
    let (got, _) = zero_shot_eval(t.model(), &ck, &c, "l1", "l2", 12).unwrap();
    println!("l1->l2 zero-shot: untrained {:?} trained {:?}", floor.precisions, got.precisions);
    assert!(got.value >= floor.value);
    assert!(got.precisions[0] > floor.precisions[0]);
}
