use serde::Serialize;

use crate::corpus::Example;
use crate::error::{ensure, Result};
use crate::model::{ParamStore, Seq2Seq, TokenBatch};
use crate::pipeline::Checkpoint;

use super::metrics::EVAL_BATCH;
use super::views::{pair_view, zero_shot_view};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ViewCheck {
    /// Pair language, or `zero-shot`.
    pub view: String,
    pub logits: usize,
    pub mismatches: usize,
    pub max_deviation: f64,
}

/// Logit comparison of two checkpoints over the earlier one's probes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityReport {
    pub checks: Vec<ViewCheck>,
}

impl StabilityReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.mismatches == 0)
    }

    pub fn max_deviation(&self) -> f64 {
        self.checks.iter().map(|c| c.max_deviation).fold(0.0, f64::max)
    }
}

fn compare(
    model: &Seq2Seq<f32>,
    a: &ParamStore<f32>,
    b: &ParamStore<f32>,
    probes: &[Example],
    view: String,
) -> Result<ViewCheck> {
    let mut check = ViewCheck {
        view,
        logits: 0,
        mismatches: 0,
        max_deviation: 0.0,
    };
    for chunk in probes.chunks(EVAL_BATCH) {
        let rows: Vec<(&[u32], &[u32])> = chunk.iter().map(|e| (e.src.as_slice(), e.tgt.as_slice())).collect();
        let batch = TokenBatch::from_pairs(&rows)?;
        let (x, y) = (model.logits(a, &batch)?, model.logits(b, &batch)?);
        for (&p, &q) in x.data().iter().zip(y.data()) {
            check.logits += 1;
            if p.to_bits() != q.to_bits() {
                check.mismatches += 1;
                let d = (p as f64 - q as f64).abs();
                check.max_deviation = check.max_deviation.max(if d.is_nan() { f64::INFINITY } else { d });
            }
        }
    }
    Ok(check)
}

/// Bitwise comparison of the logits every pair adapted in `before`, and the
/// shared-only view, produce in `before` and in `after`.
pub fn stability_check(model: &Seq2Seq<f32>, before: &Checkpoint, after: &Checkpoint) -> Result<StabilityReport> {
    ensure!(before.model == after.model, Config, "checkpoints use different model configurations");
    ensure!(&before.model == model.config(), Config, "model does not match the checkpoints");
    ensure!(before.vocab == after.vocab, Config, "checkpoints use different vocabularies");
    ensure!(
        after.order.starts_with(&before.order),
        Contract,
        "adaptation order {:?} does not extend {:?}",
        after.order,
        before.order
    );
    ensure!(
        before.mask.is_some() && after.mask.is_some(),
        Contract,
        "stability is defined between pruned checkpoints"
    );
    let mut checks = Vec::new();
    for lang in &before.order {
        let probes = before.probes.examples(lang);
        ensure!(!probes.is_empty(), InvalidInput, "no probes stored for {lang}");
        checks.push(compare(model, &pair_view(before, lang)?, &pair_view(after, lang)?, &probes, lang.clone())?);
    }
    let all = before.probes.all_examples();
    ensure!(!all.is_empty(), InvalidInput, "checkpoint stores no probes");
    checks.push(compare(model, &zero_shot_view(before)?, &zero_shot_view(after)?, &all, "zero-shot".into())?);
    Ok(StabilityReport { checks })
}
