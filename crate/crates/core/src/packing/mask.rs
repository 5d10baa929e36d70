use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::model::ParamStore;
use crate::numcore::{Gradients, Real};

pub type OwnerId = u8;

pub const FREE: OwnerId = 0;
pub const SHARED: OwnerId = 1;
/// Owner ids are bytes; 0 and 1 are reserved.
pub const MAX_PAIRS: usize = 254;

/// Owner id of the `k`-th adapted pair (1-based).
pub fn pair_owner(k: usize) -> Result<OwnerId> {
    ensure!(
        (1..=MAX_PAIRS).contains(&k),
        Contract,
        "pair index {k} outside 1..={MAX_PAIRS}"
    );
    Ok((k + 1) as OwnerId)
}

/// A set of owner ids, used both as the forward active set and as the
/// trainable set of a phase.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct OwnerSet {
    bits: [u64; 4],
}

impl OwnerSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn of(owners: &[OwnerId]) -> Self {
        let mut s = Self::empty();
        for &o in owners {
            s.insert(o);
        }
        s
    }

    /// `{lo, ..., hi}`; empty when `lo > hi`.
    pub fn range(lo: OwnerId, hi: OwnerId) -> Self {
        let mut s = Self::empty();
        for o in lo..=hi {
            s.insert(o);
        }
        s
    }

    /// Inference for the `t`-th adapted pair: shared weights plus pairs `1..=t`.
    pub fn inference(t: usize) -> Result<Self> {
        Ok(Self::range(SHARED, pair_owner(t)?))
    }

    /// Zero-shot and non-adapted directions: shared weights only.
    pub fn zero_shot() -> Self {
        Self::of(&[SHARED])
    }

    /// Forward view while training the free weights for pair `k`: the free
    /// weights, the shared weights and all earlier pairs.
    pub fn free_training_view(k: usize) -> Result<Self> {
        Ok(Self::range(FREE, pair_owner(k)? - 1))
    }

    pub fn insert(&mut self, o: OwnerId) {
        self.bits[(o / 64) as usize] |= 1 << (o % 64);
    }

    pub fn contains(&self, o: OwnerId) -> bool {
        self.bits[(o / 64) as usize] & (1 << (o % 64)) != 0
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&b| b == 0)
    }

    pub fn owners(&self) -> Vec<OwnerId> {
        (0..=255u8).filter(|&o| self.contains(o)).collect()
    }
}

impl std::fmt::Debug for OwnerSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_set().entries(self.owners()).finish()
    }
}

/// Per-element owner ids for every prunable tensor, in parameter-store order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OwnershipMask {
    tensors: Vec<MaskedTensor>,
    num_pairs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct MaskedTensor {
    name: String,
    shape: Vec<usize>,
    owners: Vec<OwnerId>,
}

/// Flat element indices per prunable tensor name.
pub type IndexSets = BTreeMap<String, Vec<usize>>;

impl OwnershipMask {
    /// Every prunable element of `params` assigned to `owner`.
    pub fn uniform<T: Real>(params: &ParamStore<T>, owner: OwnerId, num_pairs: usize) -> Result<Self> {
        ensure!(
            num_pairs <= MAX_PAIRS,
            Contract,
            "{num_pairs} pairs exceed the {MAX_PAIRS}-pair owner space"
        );
        Ok(Self {
            tensors: params
                .prunable()
                .map(|e| MaskedTensor {
                    name: e.name.clone(),
                    shape: e.tensor.shape().to_vec(),
                    owners: vec![owner; e.tensor.numel()],
                })
                .collect(),
            num_pairs,
        })
    }

    pub fn from_parts(parts: Vec<(String, Vec<usize>, Vec<OwnerId>)>, num_pairs: usize) -> Result<Self> {
        let mut tensors = Vec::with_capacity(parts.len());
        for (name, shape, owners) in parts {
            ensure!(
                shape.iter().product::<usize>() == owners.len(),
                Shape,
                "owner array of {name} has {} entries for shape {shape:?}",
                owners.len()
            );
            tensors.push(MaskedTensor { name, shape, owners });
        }
        Ok(Self { tensors, num_pairs })
    }

    pub fn num_pairs(&self) -> usize {
        self.num_pairs
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|t| t.name.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[usize], &[OwnerId])> {
        self.tensors
            .iter()
            .map(|t| (t.name.as_str(), t.shape.as_slice(), t.owners.as_slice()))
    }

    pub fn owners(&self, name: &str) -> Option<&[OwnerId]> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .map(|t| t.owners.as_slice())
    }

    pub fn owners_mut(&mut self, name: &str) -> Result<&mut Vec<OwnerId>> {
        self.tensors
            .iter_mut()
            .find(|t| t.name == name)
            .map(|t| &mut t.owners)
            .ok_or_else(|| Error::Contract(format!("{name} has no owner mask")))
    }

    /// Element indices of `name` whose owner is `owner`.
    pub fn indices_of(&self, name: &str, owner: OwnerId) -> Vec<usize> {
        self.owners(name)
            .map(|o| (0..o.len()).filter(|&i| o[i] == owner).collect())
            .unwrap_or_default()
    }

    /// Free element indices of every tensor.
    pub fn free_indices(&self) -> IndexSets {
        self.tensors
            .iter()
            .map(|t| (t.name.clone(), self.indices_of(&t.name, FREE)))
            .collect()
    }

    pub fn contains_owner(&self, owner: OwnerId) -> bool {
        self.tensors.iter().any(|t| t.owners.contains(&owner))
    }

    pub fn histogram(&self) -> BTreeMap<OwnerId, usize> {
        let mut h = BTreeMap::new();
        for t in &self.tensors {
            for &o in &t.owners {
                *h.entry(o).or_insert(0) += 1;
            }
        }
        h
    }

    pub fn total(&self) -> usize {
        self.tensors.iter().map(|t| t.owners.len()).sum()
    }

    /// The mask covers exactly the prunable tensors of `params`, shape for shape.
    pub fn check_matches<T: Real>(&self, params: &ParamStore<T>) -> Result<()> {
        let prunable: Vec<_> = params.prunable().collect();
        ensure!(
            prunable.len() == self.tensors.len(),
            Contract,
            "mask covers {} tensors, model has {} prunable",
            self.tensors.len(),
            prunable.len()
        );
        for (e, t) in prunable.iter().zip(&self.tensors) {
            ensure!(
                e.name == t.name && e.tensor.shape() == t.shape.as_slice(),
                Contract,
                "mask entry {} {:?} does not match parameter {} {:?}",
                t.name,
                t.shape,
                e.name,
                e.tensor.shape()
            );
        }
        Ok(())
    }

    /// Every free element carries the value zero.
    pub fn check_free_zero<T: Real>(&self, params: &ParamStore<T>) -> Result<()> {
        for t in &self.tensors {
            let w = params.get(&t.name)?.data();
            if let Some(i) = (0..w.len()).find(|&i| t.owners[i] == FREE && w[i] != T::zero()) {
                return Err(Error::Contract(format!(
                    "free element {i} of {} holds {}",
                    t.name, w[i]
                )));
            }
        }
        Ok(())
    }
}

/// Assigns the survivors `trained_free \ pruned` to `new_owner`; pruned
/// elements stay free.
pub fn claim_survivors(
    mask: &mut OwnershipMask,
    trained_free: &IndexSets,
    pruned: &IndexSets,
    new_owner: OwnerId,
) -> Result<usize> {
    ensure!(
        new_owner > SHARED,
        Contract,
        "owner {new_owner} is reserved and cannot be claimed"
    );
    ensure!(
        !mask.contains_owner(new_owner),
        Contract,
        "owner {new_owner} already holds weights"
    );
    for name in pruned.keys() {
        ensure!(
            trained_free.contains_key(name),
            Contract,
            "pruned set names {name}, which was not trained"
        );
    }
    let mut claims: Vec<(String, Vec<usize>)> = Vec::new();
    for (name, trained) in trained_free {
        let owners = mask
            .owners(name)
            .ok_or_else(|| Error::Contract(format!("{name} has no owner mask")))?;
        let mut state = vec![0u8; owners.len()];
        for &i in trained {
            ensure!(i < owners.len(), Contract, "index {i} outside {name}");
            ensure!(owners[i] == FREE, Contract, "{name}[{i}] is owned by {}", owners[i]);
            ensure!(state[i] == 0, Contract, "{name}[{i}] listed twice");
            state[i] = 1;
        }
        for &i in pruned.get(name).map(Vec::as_slice).unwrap_or(&[]) {
            ensure!(
                i < owners.len() && state[i] == 1,
                Contract,
                "pruned element {name}[{i}] was not trained or is listed twice"
            );
            state[i] = 2;
        }
        claims.push((
            name.clone(),
            (0..owners.len()).filter(|&i| state[i] == 1).collect(),
        ));
    }
    let mut claimed = 0;
    for (name, survivors) in claims {
        let owners = mask.owners_mut(&name)?;
        for i in survivors {
            owners[i] = new_owner;
            claimed += 1;
        }
    }
    Ok(claimed)
}

/// Effective parameters for a forward pass: prunable elements whose owner is
/// not active read as zero; everything else passes through unchanged.
pub fn masked_view<T: Real>(
    params: &ParamStore<T>,
    mask: &OwnershipMask,
    active: &OwnerSet,
) -> Result<ParamStore<T>> {
    ensure!(!active.is_empty(), Contract, "empty active set");
    mask.check_matches(params)?;
    let mut view = params.clone();
    let mut masks = mask.tensors.iter();
    for e in view.entries_mut().filter(|e| e.prunable) {
        let t = masks.next().expect("checked above");
        for (w, &o) in e.tensor.data_mut().iter_mut().zip(&t.owners) {
            if !active.contains(o) {
                *w = T::zero();
            }
        }
    }
    Ok(view)
}

/// Which elements of one parameter an optimizer may touch.
#[derive(Clone, Debug, PartialEq)]
pub enum UpdateRule {
    All,
    Nothing,
    Elements(Vec<bool>),
}

impl UpdateRule {
    /// Rule for parameter `name` given the phase's trainable owners.
    pub fn for_param(
        mask: Option<&OwnershipMask>,
        name: &str,
        prunable: bool,
        trainable: &OwnerSet,
        include_nonprunable: bool,
    ) -> Self {
        match (mask, prunable) {
            (_, false) => {
                if include_nonprunable {
                    UpdateRule::All
                } else {
                    UpdateRule::Nothing
                }
            }
            (None, true) => UpdateRule::All,
            (Some(m), true) => match m.owners(name) {
                Some(owners) => {
                    let flags: Vec<bool> = owners.iter().map(|&o| trainable.contains(o)).collect();
                    if flags.iter().all(|&f| f) {
                        UpdateRule::All
                    } else if !flags.iter().any(|&f| f) {
                        UpdateRule::Nothing
                    } else {
                        UpdateRule::Elements(flags)
                    }
                }
                None => UpdateRule::Nothing,
            },
        }
    }

    pub fn as_mask(&self) -> Option<&[bool]> {
        match self {
            UpdateRule::Elements(f) => Some(f),
            _ => None,
        }
    }
}

/// Zeroes gradients outside the trainable owners; non-prunable parameter
/// gradients survive only with `include_nonprunable`.
pub fn gradient_gate<T: Real>(
    mut grads: Gradients<T>,
    mask: &OwnershipMask,
    trainable: &OwnerSet,
    include_nonprunable: bool,
) -> Gradients<T> {
    for (name, g) in grads.iter_mut() {
        match mask.owners(name) {
            Some(owners) => {
                for (x, &o) in g.data_mut().iter_mut().zip(owners) {
                    if !trainable.contains(o) {
                        *x = T::zero();
                    }
                }
            }
            None => {
                if !include_nonprunable {
                    g.data_mut().iter_mut().for_each(|x| *x = T::zero());
                }
            }
        }
    }
    grads
}
