use crate::error::Result;
use crate::model::ParamStore;
use crate::packing::{masked_view, pair_owner, OwnerSet, SHARED};
use crate::pipeline::Checkpoint;

/// Parameters serving pair `lang`: its own and all earlier owners once it is
/// adapted, otherwise the shared weights alone. Unpruned models are used whole.
pub fn pair_view(ck: &Checkpoint, lang: &str) -> Result<ParamStore<f32>> {
    match &ck.mask {
        None => Ok(ck.params.clone()),
        Some(m) => {
            let active = match ck.position(lang) {
                Some(t) => OwnerSet::inference(t)?,
                None => OwnerSet::zero_shot(),
            };
            masked_view(&ck.params, m, &active)
        }
    }
}

/// Parameters for directions no pair owns: the shared weights only, or the
/// whole model before any pruning.
pub fn zero_shot_view(ck: &Checkpoint) -> Result<ParamStore<f32>> {
    match &ck.mask {
        None => Ok(ck.params.clone()),
        Some(m) => masked_view(&ck.params, m, &OwnerSet::zero_shot()),
    }
}

/// Share of prunable weights owned by pair `lang` itself (shared weights
/// for unadapted pairs, everything for unpruned models).
pub fn own_fraction(ck: &Checkpoint, lang: &str) -> Result<f64> {
    let Some(m) = &ck.mask else { return Ok(1.0) };
    let owner = match ck.position(lang) {
        Some(t) => pair_owner(t)?,
        None => SHARED,
    };
    let count = m.histogram().get(&owner).copied().unwrap_or(0);
    Ok(count as f64 / m.total() as f64)
}
