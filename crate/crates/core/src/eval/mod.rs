//! Scoring: corpus BLEU, token accuracy and loss, zero-shot decoding through
//! the shared weights, frozen-behavior verification and report tables.

mod bleu;
mod metrics;
mod probes;
mod report;
mod stability;
mod views;

pub use bleu::{bleu, BleuScore};
pub use metrics::{decode_bleu, mean_loss, token_accuracy, translate, EVAL_BATCH};
pub use probes::ProbeSet;
pub use report::{
    capacity_tsv, evaluate_checkpoint, evaluate_pair, interference_tsv, plot_tsv, zero_shot_eval, zero_shot_grid,
    zero_shot_tsv, DirectionScore, SystemEval, ZeroShotRow,
};
pub use stability::{stability_check, StabilityReport, ViewCheck};
pub use views::{own_fraction, pair_view, zero_shot_view};
