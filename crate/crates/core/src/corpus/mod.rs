//! Synthetic English-centric parallel data with resource imbalance and
//! cross-language conflict, its vocabulary, temperature sampling and batching.
//!
//! Every non-English language renders an English sentence through a partial
//! cipher followed by windowed reversal. In conflict mode all languages share
//! one content block, so a source sentence alone does not reveal its language.

mod data;
mod io;
mod lang;
mod sampler;
mod vocab;

pub use data::{ConflictMode, CorpusConfig, Direction, Example, PairData, ParallelCorpus, SentencePair, Split, ENGLISH};
pub use io::{direction_file, MANIFEST, MULTIWAY};
pub use lang::{gen_language, reorder, Cipher, LanguageSpec};
pub use sampler::{example_cost, temperature_weights, Batch, BatchSampler, SamplerConfig};
pub use vocab::Vocab;

#[cfg(test)]
mod tests;
