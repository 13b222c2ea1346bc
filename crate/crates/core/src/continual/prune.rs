use crate::continual::registry::check_ratio;
use crate::error::{Error, Result};

/// Elements of one tensor released by a magnitude prune.
#[derive(Clone, Debug, PartialEq)]
pub struct PruneDecision {
    /// Largest `|v|` among freed elements; `0` when nothing is freed.
    pub threshold: f64,
    /// Flat indices, ascending.
    pub freed: Vec<usize>,
    /// Number of candidate elements `h`.
    pub candidates: usize,
}

/// `round(q · h)` with halves rounded up.
pub fn prune_count(q: f64, h: usize) -> usize {
    // The small slack absorbs representation error in products like 0.7 · 10.
    ((q * h as f64) + 0.5 + 1e-9).floor() as usize
}

/// Chooses `round(q · h)` candidates with the smallest `(|value|, index)`.
pub fn compute_prune_mask(values: &[f64], candidates: &[bool], q: f64) -> Result<PruneDecision> {
    check_ratio(q)?;
    if values.len() != candidates.len() {
        return Err(Error::dim("compute_prune_mask", "elements", values.len(), candidates.len()));
    }
    let mut pool: Vec<usize> = (0..values.len()).filter(|&i| candidates[i]).collect();
    let h = pool.len();
    if h == 0 {
        log::warn!("prune skipped: tensor has no candidate elements");
        return Ok(PruneDecision {
            threshold: 0.0,
            freed: Vec::new(),
            candidates: 0,
        });
    }
    let k = prune_count(q, h).min(h);
    pool.sort_by(|&a, &b| values[a].abs().total_cmp(&values[b].abs()).then(a.cmp(&b)));
    let mut freed = pool[..k].to_vec();
    let threshold = freed.last().map_or(0.0, |&i| values[i].abs());
    freed.sort_unstable();
    Ok(PruneDecision {
        threshold,
        freed,
        candidates: h,
    })
}
