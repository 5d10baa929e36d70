//! Ownership masks over prunable weights: magnitude pruning, claiming of freed
//! weights by a language pair, masked forward views, gradient gating and
//! capacity accounting.
//!
//! Owner values: `0` is free, `1` is the shared multilingual network and
//! `k + 1` belongs to the `k`-th adapted pair. Claimed owners never change.

mod capacity;
mod mask;
mod prune;

pub use capacity::{
    capacity_schedule, equal_share_ratios, expected_shares, CapacityReport, OwnerShare, TensorCapacity,
};
pub use mask::{
    claim_survivors, gradient_gate, masked_view, pair_owner, IndexSets, OwnerId, OwnerSet,
    OwnershipMask, UpdateRule, FREE, MAX_PAIRS, SHARED,
};
pub use prune::{magnitude_prune, prune_count};

/// Owners enabled in a forward pass.
pub type ActiveSet = OwnerSet;
