//! Browser bindings for three small views of the method: how much of the
//! network each pair ends up owning, how temperature flattens sampling over
//! unequal pairs, and how ownership spreads over one weight matrix.

use prunepack::packing::{
    claim_survivors, equal_share_ratios, expected_shares, magnitude_prune, IndexSets, OwnershipMask, FREE, SHARED,
};
use rand::Rng;
use wasm_bindgen::prelude::*;

/// Stand-in name; any prunable weight name works for a single-tensor mask.
const TENSOR: &str = "encoder.layers.0.fc1.weight";

fn js(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

pub fn shares(base_ratio: f64, pair_ratio: f64, pairs: usize, equal_share: bool, prune_last: bool) -> Result<Vec<f64>, String> {
    if !(0.0..1.0).contains(&base_ratio) {
        return Err(format!("base ratio {base_ratio} outside [0, 1)"));
    }
    let free = 1.0 - base_ratio;
    let mut ratios = if equal_share {
        equal_share_ratios(free, pairs.max(1)).map_err(|e| e.to_string())?
    } else {
        vec![pair_ratio; pairs]
    };
    ratios.truncate(pairs);
    if !prune_last {
        if let Some(r) = ratios.last_mut() {
            *r = 0.0;
        }
    }
    let mut out = expected_shares(free, &ratios).map_err(|e| e.to_string())?;
    let used: f64 = out.iter().sum();
    out.push((free - used).max(0.0));
    Ok(out)
}

/// Fraction of prunable weights owned by each of `pairs` adapted pairs,
/// followed by the fraction still free at the end.
#[wasm_bindgen]
pub fn capacity_curve(
    base_ratio: f64,
    pair_ratio: f64,
    pairs: usize,
    equal_share: bool,
    prune_last: bool,
) -> Result<Vec<f64>, JsError> {
    shares(base_ratio, pair_ratio, pairs, equal_share, prune_last).map_err(js)
}

/// Sampling probability of each pair given its training-set size.
#[wasm_bindgen]
pub fn temperature_weights(sizes: Vec<u32>, temperature: f64) -> Result<Vec<f64>, JsError> {
    let sizes: Vec<usize> = sizes.into_iter().map(|s| s as usize).collect();
    prunepack::corpus::temperature_weights(&sizes, temperature).map_err(js)
}

pub fn evolve(
    rows: usize,
    cols: usize,
    base_ratio: f64,
    pair_ratio: f64,
    pairs: usize,
    seed: u32,
) -> Result<Vec<u8>, String> {
    let n = rows * cols;
    if n == 0 || n > 1 << 16 {
        return Err(format!("matrix of {rows}x{cols} outside 1..=65536 elements"));
    }
    if pairs > 32 {
        return Err("at most 32 pairs".into());
    }
    let err = |e: prunepack::Error| e.to_string();
    let mut rng = prunepack::seeds::substream(seed as u64, "demo");
    let mut weights: Vec<f32> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut mask =
        OwnershipMask::from_parts(vec![(TENSOR.into(), vec![rows, cols], vec![SHARED; n])], pairs).map_err(err)?;
    let mut frames = mask.owners(TENSOR).expect("one tensor").to_vec();

    let all: Vec<usize> = (0..n).collect();
    for i in magnitude_prune(&weights, &all, base_ratio).map_err(err)? {
        weights[i] = 0.0;
        mask.owners_mut(TENSOR).map_err(err)?[i] = FREE;
    }
    frames.extend_from_slice(mask.owners(TENSOR).expect("one tensor"));

    for t in 1..=pairs {
        let free = mask.indices_of(TENSOR, FREE);
        if free.is_empty() {
            frames.extend_from_slice(mask.owners(TENSOR).expect("one tensor"));
            continue;
        }
        // Training is simulated by fresh magnitudes on the free weights.
        for &i in &free {
            weights[i] = rng.random_range(-1.0..1.0);
        }
        let pruned = magnitude_prune(&weights, &free, pair_ratio).map_err(err)?;
        for &i in &pruned {
            weights[i] = 0.0;
        }
        let trained: IndexSets = [(TENSOR.to_string(), free)].into();
        let dropped: IndexSets = [(TENSOR.to_string(), pruned)].into();
        claim_survivors(&mut mask, &trained, &dropped, (t + 1) as u8).map_err(err)?;
        frames.extend_from_slice(mask.owners(TENSOR).expect("one tensor"));
    }
    Ok(frames)
}

/// Owner ids of a `rows x cols` matrix, frame after frame: dense, after
/// base pruning, then after each pair. Frames are concatenated row-major.
#[wasm_bindgen]
pub fn mask_evolution(
    rows: usize,
    cols: usize,
    base_ratio: f64,
    pair_ratio: f64,
    pairs: usize,
    seed: u32,
) -> Result<Vec<u8>, JsError> {
    evolve(rows, cols, base_ratio, pair_ratio, pairs, seed).map_err(js)
}
