use std::cmp::Ordering;

use crate::error::{ensure, Result};
use crate::numcore::Real;

/// Number of elements removed when pruning `ratio` of `n` candidates.
///
/// The product is nudged by 1e-9 before flooring so that ratios such as
/// `1 - 1/3` applied to a multiple of three are not lost to rounding.
pub fn prune_count(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64 + 1e-9).floor() as usize).min(n)
}

/// One-shot magnitude pruning: the `prune_count(ratio, |candidates|)` candidate
/// indices of smallest absolute value, ties going to the lower flat index.
/// Returned indices are sorted ascending; zeroing them is the caller's job.
pub fn magnitude_prune<T: Real>(values: &[T], candidates: &[usize], ratio: f64) -> Result<Vec<usize>> {
    ensure!(
        (0.0..=1.0).contains(&ratio),
        Contract,
        "pruning ratio {ratio} outside [0,1]"
    );
    ensure!(
        ratio == 0.0 || !candidates.is_empty(),
        Contract,
        "pruning ratio {ratio} over an empty candidate set"
    );
    if let Some(&bad) = candidates.iter().find(|&&i| i >= values.len()) {
        return Err(crate::Error::Contract(format!(
            "candidate index {bad} outside tensor of {}",
            values.len()
        )));
    }
    let count = prune_count(ratio, candidates.len());
    if count == 0 {
        return Ok(Vec::new());
    }
    let key = |&i: &usize| (values[i].abs(), i);
    let by_magnitude = |a: &usize, b: &usize| -> Ordering {
        let (ma, ia) = key(a);
        let (mb, ib) = key(b);
        ma.partial_cmp(&mb).unwrap_or(Ordering::Equal).then(ia.cmp(&ib))
    };
    let mut order = candidates.to_vec();
    if count < order.len() {
        order.select_nth_unstable_by(count - 1, by_magnitude);
        order.truncate(count);
    }
    order.sort_unstable();
    Ok(order)
}
