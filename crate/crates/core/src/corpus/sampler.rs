use std::collections::VecDeque;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::Example;
use crate::error::{ensure, Error, Result};

/// Draws per pair proportional to `(n_i / sum n)^(1/T)`.
pub fn temperature_weights(sizes: &[usize], temperature: f64) -> Result<Vec<f64>> {
    ensure!(temperature > 0.0 && temperature.is_finite(), Contract, "temperature must be positive, got {temperature}");
    ensure!(!sizes.is_empty(), Contract, "temperature sampling needs at least one pair");
    ensure!(sizes.iter().all(|&n| n > 0), Contract, "pair sizes must be positive");
    let total: f64 = sizes.iter().map(|&n| n as f64).sum();
    let raw: Vec<f64> = sizes.iter().map(|&n| (n as f64 / total).powf(1.0 / temperature)).collect();
    let z: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / z).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub temperature: f64,
    pub max_tokens: usize,
}

impl SamplerConfig {
    /// Small batches, so a 400-sentence pair still gets dozens of updates per epoch.
    pub fn desk() -> Self {
        Self {
            temperature: 5.0,
            max_tokens: 256,
        }
    }

    pub fn paper() -> Self {
        Self {
            temperature: 5.0,
            max_tokens: 3050,
        }
    }
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Budget charge of one example: the longer of its source and its decoder
/// sequence (target plus the start or end marker).
pub fn example_cost(e: &Example) -> usize {
    e.src.len().max(e.tgt.len() + 1)
}

/// `(pool, index)` references into the pools handed to the sampler.
pub type Batch = Vec<(usize, usize)>;

const CHUNK: usize = 2048;

/// Endless stream of length-bucketed batches. Pools are drawn by temperature
/// weight and examples uniformly within a pool; each chunk of draws is sorted
/// by length and cut at the token budget, and the resulting batches are
/// shuffled.
pub struct BatchSampler {
    costs: Vec<Vec<usize>>,
    pick: WeightedIndex<f64>,
    max_tokens: usize,
    rng: ChaCha8Rng,
    pending: VecDeque<Batch>,
}

impl BatchSampler {
    pub fn new(pools: &[&[Example]], weights: &[f64], max_tokens: usize, rng: ChaCha8Rng) -> Result<Self> {
        ensure!(pools.len() == weights.len(), Contract, "{} pools but {} weights", pools.len(), weights.len());
        ensure!(pools.iter().all(|p| !p.is_empty()), InvalidInput, "empty example pool");
        let costs: Vec<Vec<usize>> = pools.iter().map(|p| p.iter().map(example_cost).collect()).collect();
        let longest = costs.iter().flatten().copied().max().unwrap_or(0);
        ensure!(
            longest <= max_tokens,
            InvalidInput,
            "sequence of {longest} tokens exceeds the batch budget of {max_tokens}"
        );
        let pick = WeightedIndex::new(weights).map_err(|e| Error::Contract(format!("sampling weights: {e}")))?;
        Ok(Self {
            costs,
            pick,
            max_tokens,
            rng,
            pending: VecDeque::new(),
        })
    }

    fn refill(&mut self) {
        let mut draws: Vec<(usize, usize, usize)> = (0..CHUNK)
            .map(|_| {
                let p = self.pick.sample(&mut self.rng);
                let i = self.rng.random_range(0..self.costs[p].len());
                (self.costs[p][i], p, i)
            })
            .collect();
        draws.sort_by_key(|d| d.0);
        let mut batches = Vec::new();
        let mut cur: Batch = Vec::new();
        let mut widest = 0;
        for (cost, p, i) in draws {
            if !cur.is_empty() && (cur.len() + 1) * widest.max(cost) > self.max_tokens {
                batches.push(std::mem::take(&mut cur));
                widest = 0;
            }
            widest = widest.max(cost);
            cur.push((p, i));
        }
        batches.push(cur);
        batches.shuffle(&mut self.rng);
        self.pending.extend(batches);
    }
}

impl Iterator for BatchSampler {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pending.is_empty() {
            self.refill();
        }
        self.pending.pop_front()
    }
}
