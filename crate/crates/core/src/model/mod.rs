//! Encoder-decoder transformer whose parameters live in a named,
//! prunability-annotated [`ParamStore`].

mod config;
mod params;
mod transformer;

pub use config::ModelConfig;
pub use params::{is_prunable_name, param_census, parameter_layout, Census, CensusRow, ParamEntry, ParamStore};
pub use transformer::{argmax, Seq2Seq, TokenBatch};

pub const PAD_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
/// Number of reserved ids below the content vocabulary.
pub const NUM_SPECIALS: u32 = 3;

#[cfg(test)]
mod tests;
