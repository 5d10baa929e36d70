//! Small corpora and models shared by unit tests.

use crate::corpus::{ConflictMode, CorpusConfig, ParallelCorpus, SamplerConfig};
use crate::model::ModelConfig;
use crate::pipeline::{Checkpoint, TrainSettings, Trainer};

pub fn tiny_corpus_config() -> CorpusConfig {
    CorpusConfig {
        pair_sizes: vec![48, 32, 16],
        base_vocab: 10,
        min_len: 3,
        max_len: 6,
        dev_size: 8,
        test_size: 8,
        multiway_size: 6,
        cipher_fraction: 0.5,
        mode: ConflictMode::Conflict,
    }
}

pub fn tiny_corpus() -> ParallelCorpus {
    ParallelCorpus::generate(&tiny_corpus_config(), 7).unwrap()
}

pub fn tiny_model(vocab: usize) -> ModelConfig {
    ModelConfig {
        num_heads: 2,
        num_encoder_layers: 1,
        num_decoder_layers: 1,
        embed_dim: 16,
        ffn_dim: 32,
        dropout: 0.1,
        vocab_size: vocab,
        max_seq_len: 16,
    }
}

pub fn trainer(corpus: &ParallelCorpus, seed: u64) -> Trainer<'_> {
    let settings = TrainSettings {
        lr: 5e-3,
        warmup_steps: 4,
        free_init_scale: 0.1,
        min_phase_examples: 0,
    };
    let sampler = SamplerConfig {
        temperature: 5.0,
        max_tokens: 96,
    };
    Trainer::new(corpus, tiny_model(corpus.vocab.size()), settings, sampler, seed).unwrap()
}

/// A fresh checkpoint trained multilingually for `epochs`.
pub fn trained(t: &Trainer<'_>, epochs: usize) -> Checkpoint {
    let mut ck = t.init_checkpoint(serde_json::json!({"test": true}), 4).unwrap();
    t.train_multilingual(&mut ck, epochs).unwrap();
    ck
}
