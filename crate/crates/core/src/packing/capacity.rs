use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{ensure, Result};

use super::{OwnerId, OwnershipMask};

/// Fraction of all prunable weights kept by pair `k` when each pair trains
/// on `free_fraction * r2^(k-1)` and keeps the unpruned `1 - r2` share of it.
pub fn capacity_schedule(free_fraction: f64, second_ratio: f64, k: usize) -> Result<f64> {
    ensure!(
        free_fraction > 0.0 && free_fraction <= 1.0,
        Contract,
        "free fraction {free_fraction} outside (0,1]"
    );
    ensure!(
        (0.0..1.0).contains(&second_ratio),
        Contract,
        "second pruning ratio {second_ratio} outside [0,1)"
    );
    ensure!(k >= 1, Contract, "pairs are numbered from 1");
    Ok(free_fraction * (1.0 - second_ratio) * second_ratio.powi(k as i32 - 1))
}

/// Per-pair second pruning ratios that leave each of `num_pairs` pairs with
/// exactly `free_fraction / num_pairs` of the prunable weights.
pub fn equal_share_ratios(free_fraction: f64, num_pairs: usize) -> Result<Vec<f64>> {
    ensure!(num_pairs >= 1, Contract, "equal shares need at least one pair");
    ensure!(
        free_fraction > 0.0 && free_fraction <= 1.0,
        Contract,
        "free fraction {free_fraction} outside (0,1]"
    );
    Ok((1..=num_pairs)
        .map(|k| 1.0 - 1.0 / (num_pairs - k + 1) as f64)
        .collect())
}

/// Expected share of every adapted pair when pair `t` keeps `1 - ratios[t]`
/// of the weights still free before it.
pub fn expected_shares(free_fraction: f64, ratios: &[f64]) -> Result<Vec<f64>> {
    ensure!(
        (0.0..=1.0).contains(&free_fraction),
        Contract,
        "free fraction {free_fraction} outside [0,1]"
    );
    let mut left = free_fraction;
    let mut out = Vec::with_capacity(ratios.len());
    for &r in ratios {
        ensure!((0.0..1.0).contains(&r), Contract, "second pruning ratio {r} outside [0,1)");
        out.push(left * (1.0 - r));
        left *= r;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OwnerShare {
    pub owner: OwnerId,
    pub count: usize,
    pub fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TensorCapacity {
    pub name: String,
    pub total: usize,
    pub counts: BTreeMap<OwnerId, usize>,
}

/// Element counts per owner, globally and per tensor.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CapacityReport {
    pub prunable_total: usize,
    pub owners: Vec<OwnerShare>,
    pub tensors: Vec<TensorCapacity>,
}

impl CapacityReport {
    pub fn from_mask(mask: &OwnershipMask) -> Self {
        let total = mask.total();
        let owners = mask
            .histogram()
            .into_iter()
            .map(|(owner, count)| OwnerShare {
                owner,
                count,
                fraction: count as f64 / total as f64,
            })
            .collect();
        let tensors = mask
            .iter()
            .map(|(name, _, owners)| {
                let mut counts = BTreeMap::new();
                for &o in owners {
                    *counts.entry(o).or_insert(0) += 1;
                }
                TensorCapacity {
                    name: name.to_string(),
                    total: owners.len(),
                    counts,
                }
            })
            .collect();
        Self {
            prunable_total: total,
            owners,
            tensors,
        }
    }

    pub fn fraction(&self, owner: OwnerId) -> f64 {
        self.owners
            .iter()
            .find(|s| s.owner == owner)
            .map_or(0.0, |s| s.fraction)
    }

    pub fn count(&self, owner: OwnerId) -> usize {
        self.owners
            .iter()
            .find(|s| s.owner == owner)
            .map_or(0, |s| s.count)
    }

    /// Largest per-tensor deviation, in elements, of `owner`'s count from
    /// `expected_fraction` of each tensor.
    pub fn max_tensor_deviation(&self, owner: OwnerId, expected_fraction: f64) -> f64 {
        self.tensors
            .iter()
            .map(|t| {
                let got = t.counts.get(&owner).copied().unwrap_or(0) as f64;
                (got - expected_fraction * t.total as f64).abs()
            })
            .fold(0.0, f64::max)
    }
}
