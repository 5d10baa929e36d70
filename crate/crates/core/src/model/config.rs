use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Encoder-decoder transformer dimensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub num_heads: usize,
    pub num_encoder_layers: usize,
    pub num_decoder_layers: usize,
    pub embed_dim: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub vocab_size: usize,
    pub max_seq_len: usize,
}

impl ModelConfig {
    /// Laptop-sized default used by tests and the acceptance suite.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            num_heads: 4,
            num_encoder_layers: 2,
            num_decoder_layers: 2,
            embed_dim: 64,
            ffn_dim: 128,
            dropout: 0.1,
            vocab_size,
            max_seq_len: 32,
        }
    }

    /// Transformer-base dimensions (8 heads, 6+6 layers, 512/2048, dropout 0.3).
    pub fn paper(vocab_size: usize) -> Self {
        Self {
            num_heads: 8,
            num_encoder_layers: 6,
            num_decoder_layers: 6,
            embed_dim: 512,
            ffn_dim: 2048,
            dropout: 0.3,
            vocab_size,
            max_seq_len: 256,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.num_heads > 0, Config, "num_heads must be positive");
        ensure!(self.embed_dim > 0 && self.ffn_dim > 0, Config, "dimensions must be positive");
        ensure!(
            self.embed_dim.is_multiple_of(self.num_heads),
            Config,
            "embed_dim {} not divisible by num_heads {}",
            self.embed_dim,
            self.num_heads
        );
        ensure!(
            (0.0..1.0).contains(&self.dropout),
            Config,
            "dropout {} outside [0,1)",
            self.dropout
        );
        ensure!(
            self.vocab_size > 0 && self.max_seq_len > 0,
            Config,
            "vocab_size and max_seq_len must be positive"
        );
        Ok(())
    }
}
