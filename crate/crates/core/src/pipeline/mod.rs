//! Phase sequencing over model, packing and corpus, plus checkpoint files.

mod checkpoint;
mod plan;
mod trainer;

pub use checkpoint::{Checkpoint, PhaseRecord, FORMAT_VERSION};
pub use plan::{EpochPlan, Phase, PhaseKind, PhasePlan};
pub use trainer::{TrainSettings, Trainer};

#[cfg(test)]
mod tests;
