//! Static placement of activations in one byte arena.
//!
//! On a chain, layer `i` reads activation `i` and writes activation `i + 1`,
//! so activation `k` is live during layer steps `k - 1` and `k`. Placement is
//! greedy first-fit by decreasing size.

use thiserror::Error;

use super::Model;

/// Tensor arena budget in bytes (128 KiB).
pub const ARENA_BUDGET: usize = 128 * 1024;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlanError {
    #[error("arena peak {peak} bytes exceeds budget {budget} bytes at layer {layer}")]
    BudgetExceeded { peak: usize, budget: usize, layer: usize },
    #[error("model has no layers")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArenaPlan {
    /// Byte offset of each activation (model input first).
    pub offsets: Vec<usize>,
    pub sizes: Vec<usize>,
    /// Inclusive range of layer steps during which each activation is live.
    pub lifetimes: Vec<(usize, usize)>,
    pub peak_bytes: usize,
}

fn overlaps(a: (usize, usize), b: (usize, usize)) -> bool {
    a.0 <= b.1 && b.0 <= a.1
}

impl ArenaPlan {
    pub fn range(&self, activation: usize) -> std::ops::Range<usize> {
        self.offsets[activation]..self.offsets[activation] + self.sizes[activation]
    }

    /// Largest total size of simultaneously live activations; no placement
    /// can beat it.
    pub fn lower_bound(&self) -> usize {
        live_sum_peak(&self.sizes, &self.lifetimes)
    }

    /// First pair of lifetime-overlapping activations whose byte ranges
    /// collide, if any.
    pub fn find_conflict(&self) -> Option<(usize, usize)> {
        let n = self.sizes.len();
        for a in 0..n {
            for b in a + 1..n {
                if !overlaps(self.lifetimes[a], self.lifetimes[b]) {
                    continue;
                }
                let (ra, rb) = (self.range(a), self.range(b));
                if ra.start < rb.end && rb.start < ra.end {
                    return Some((a, b));
                }
            }
        }
        None
    }
}

pub(crate) fn live_sum_peak(sizes: &[usize], lifetimes: &[(usize, usize)]) -> usize {
    let steps = lifetimes.iter().map(|l| l.1).max().map_or(0, |s| s + 1);
    (0..steps)
        .map(|t| {
            sizes
                .iter()
                .zip(lifetimes)
                .filter(|(_, l)| l.0 <= t && t <= l.1)
                .map(|(s, _)| *s)
                .sum()
        })
        .max()
        .unwrap_or(0)
}

/// Lifetimes of a chain with `layers` layers, one per activation.
pub(crate) fn chain_lifetimes(layers: usize) -> Vec<(usize, usize)> {
    (0..=layers).map(|k| (k.saturating_sub(1), k.min(layers - 1))).collect()
}

/// First-fit placement in the given order.
pub(crate) fn place(sizes: &[usize], lifetimes: &[(usize, usize)], order: &[usize]) -> Vec<usize> {
    let mut offsets = vec![0usize; sizes.len()];
    let mut placed: Vec<usize> = Vec::with_capacity(sizes.len());
    for &a in order {
        let mut busy: Vec<(usize, usize)> = placed
            .iter()
            .filter(|&&b| overlaps(lifetimes[a], lifetimes[b]))
            .map(|&b| (offsets[b], offsets[b] + sizes[b]))
            .collect();
        busy.sort_unstable();
        let mut candidate = 0;
        for (start, end) in busy {
            if candidate + sizes[a] <= start {
                break;
            }
            candidate = candidate.max(end);
        }
        offsets[a] = candidate;
        placed.push(a);
    }
    offsets
}

pub fn plan_arena(m: &Model) -> Result<ArenaPlan, PlanError> {
    plan_arena_with_budget(m, ARENA_BUDGET)
}

pub fn plan_arena_with_budget(m: &Model, budget: usize) -> Result<ArenaPlan, PlanError> {
    if m.layers.is_empty() {
        return Err(PlanError::Empty);
    }
    let sizes: Vec<usize> = m.activations().map(|a| a.byte_len()).collect();
    let lifetimes = chain_lifetimes(m.layers.len());
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by_key(|&a| std::cmp::Reverse(sizes[a]));
    let offsets = place(&sizes, &lifetimes, &order);
    let peak_bytes = offsets.iter().zip(&sizes).map(|(o, s)| o + s).max().unwrap_or(0);
    if peak_bytes > budget {
        let layer = (0..m.layers.len())
            .find(|&t| {
                (0..sizes.len())
                    .any(|a| lifetimes[a].0 <= t && t <= lifetimes[a].1 && offsets[a] + sizes[a] == peak_bytes)
            })
            .unwrap_or(0);
        return Err(PlanError::BudgetExceeded {
            peak: peak_bytes,
            budget,
            layer,
        });
    }
    Ok(ArenaPlan {
        offsets,
        sizes,
        lifetimes,
        peak_bytes,
    })
}
