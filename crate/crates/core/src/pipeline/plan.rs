use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseKind {
    MultilingualTrain,
    BasePruneRetrain,
    PairAdapt,
    PairPruneRetrain,
    FullFinetuneBaseline,
}

impl PhaseKind {
    pub fn name(self) -> &'static str {
        match self {
            PhaseKind::MultilingualTrain => "multilingual_train",
            PhaseKind::BasePruneRetrain => "base_prune_retrain",
            PhaseKind::PairAdapt => "pair_adapt",
            PhaseKind::PairPruneRetrain => "pair_prune_retrain",
            PhaseKind::FullFinetuneBaseline => "full_finetune_baseline",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub kind: PhaseKind,
    pub pair: Option<String>,
    pub epochs: usize,
    pub ratio: Option<f64>,
    /// Every phase starts a fresh optimizer and warmup; kept explicit in logs.
    pub reset_schedule: bool,
}

impl Phase {
    pub fn new(kind: PhaseKind, pair: Option<&str>, epochs: usize, ratio: Option<f64>) -> Self {
        Self {
            kind,
            pair: pair.map(String::from),
            epochs,
            ratio,
            reset_schedule: true,
        }
    }

    pub fn label(&self) -> String {
        match &self.pair {
            Some(p) => format!("{}:{p}", self.kind.name()),
            None => self.kind.name().to_string(),
        }
    }
}

/// Epoch counts for every phase kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochPlan {
    pub multilingual: usize,
    pub base_retrain: usize,
    pub pair_adapt: usize,
    pub pair_retrain: usize,
    pub finetune_baseline: usize,
}

impl EpochPlan {
    pub fn desk() -> Self {
        Self {
            multilingual: 30,
            base_retrain: 8,
            pair_adapt: 15,
            pair_retrain: 6,
            finetune_baseline: 21,
        }
    }

    pub fn paper() -> Self {
        Self {
            multilingual: 40,
            base_retrain: 10,
            pair_adapt: 20,
            pair_retrain: 10,
            finetune_baseline: 30,
        }
    }
}

/// Ordered training phases of one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasePlan {
    pub phases: Vec<Phase>,
}

impl PhasePlan {
    /// Multilingual training, base pruning, then adapt and prune-retrain for
    /// each pair of `order` with its second ratio.
    pub fn full(order: &[String], base_ratio: f64, pair_ratios: &[f64], epochs: &EpochPlan) -> Result<Self> {
        ensure!(
            order.len() == pair_ratios.len(),
            Contract,
            "{} pairs but {} pruning ratios",
            order.len(),
            pair_ratios.len()
        );
        let mut phases = vec![
            Phase::new(PhaseKind::MultilingualTrain, None, epochs.multilingual, None),
            Phase::new(PhaseKind::BasePruneRetrain, None, epochs.base_retrain, Some(base_ratio)),
        ];
        phases.extend(Self::adaptation(order, pair_ratios, epochs)?.phases);
        Ok(Self { phases })
    }

    /// Only the per-pair phases.
    pub fn adaptation(order: &[String], pair_ratios: &[f64], epochs: &EpochPlan) -> Result<Self> {
        ensure!(order.len() == pair_ratios.len(), Contract, "one ratio per pair required");
        let mut phases = Vec::new();
        for (p, &r) in order.iter().zip(pair_ratios) {
            phases.push(Phase::new(PhaseKind::PairAdapt, Some(p), epochs.pair_adapt, None));
            phases.push(Phase::new(PhaseKind::PairPruneRetrain, Some(p), epochs.pair_retrain, Some(r)));
        }
        Ok(Self { phases })
    }

    /// Checks the ordering rules against the configured pair languages.
    pub fn validate(&self, configured: &[String]) -> Result<()> {
        let configured: BTreeSet<&str> = configured.iter().map(String::as_str).collect();
        let mut saw_multi = false;
        let mut base_at = None;
        let mut adapting: Option<&str> = None;
        let mut done = BTreeSet::new();
        for (i, ph) in self.phases.iter().enumerate() {
            if let Some(r) = ph.ratio {
                ensure!((0.0..1.0).contains(&r), Config, "phase {}: ratio {r} outside [0, 1)", ph.label());
            }
            match ph.kind {
                PhaseKind::MultilingualTrain => {
                    ensure!(!saw_multi && i == 0, Contract, "multilingual training must come first, once");
                    saw_multi = true;
                }
                PhaseKind::BasePruneRetrain => {
                    ensure!(base_at.is_none(), Contract, "base pruning occurs more than once");
                    ensure!(saw_multi, Contract, "base pruning before multilingual training");
                    ensure!(ph.ratio.is_some(), Contract, "base pruning needs a ratio");
                    base_at = Some(i);
                }
                PhaseKind::PairAdapt | PhaseKind::PairPruneRetrain => {
                    let p = ph.pair.as_deref().unwrap_or_default();
                    ensure!(configured.contains(p), Config, "phase {}: unknown pair {p:?}", ph.label());
                    ensure!(
                        base_at.is_some() || !saw_multi,
                        Contract,
                        "pair phases must follow base pruning"
                    );
                    if ph.kind == PhaseKind::PairAdapt {
                        ensure!(adapting.is_none(), Contract, "pair {p} adapted before the previous pair was pruned");
                        ensure!(!done.contains(p), Contract, "pair {p} adapted twice");
                        adapting = Some(p);
                    } else {
                        ensure!(adapting == Some(p), Contract, "pair {p} pruned before it was adapted");
                        ensure!(ph.ratio.is_some(), Contract, "pair pruning needs a ratio");
                        done.insert(p);
                        adapting = None;
                    }
                }
                PhaseKind::FullFinetuneBaseline => {
                    return Err(Error::Contract("the full fine-tuning baseline is not part of a phase plan".into()))
                }
            }
        }
        ensure!(adapting.is_none(), Contract, "plan ends between adaptation and pruning");
        if saw_multi {
            ensure!(base_at.is_some(), Contract, "multilingual plan without base pruning");
        }
        Ok(())
    }
}
