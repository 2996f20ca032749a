//! ShED: shuffled-embedding detection.
//!
//! A fraction of the valid positions is selected and their content
//! embeddings are moved along a cyclic derangement of the sampled order,
//! `new[s_i] = old[s_{(i + 1) mod k}]`. A per-position binary head then has to
//! find the moved embeddings.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::nn::{sigmoid, softplus};
use crate::rng::SeededRng;
use crate::{Error, Real, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShufflePlan {
    /// Selected positions in sampling order; the cyclic shift follows this order.
    pub order: Vec<usize>,
    /// The same positions, strictly increasing.
    pub selected: Vec<usize>,
    /// `1` exactly on selected positions, length of the full row.
    pub labels: Vec<u8>,
}

impl ShufflePlan {
    pub fn from_order(order: Vec<usize>, len: usize) -> Result<Self> {
        if order.len() < 2 {
            return Err(Error::InvalidArgument("a shuffle needs at least two positions".into()));
        }
        let mut labels = vec![0u8; len];
        for &p in &order {
            if p >= len || labels[p] == 1 {
                return Err(Error::BadShuffleIndex { index: p });
            }
            labels[p] = 1;
        }
        let mut selected = order.clone();
        selected.sort_unstable();
        Ok(Self { order, selected, labels })
    }

    pub fn k(&self) -> usize {
        self.order.len()
    }

    /// `(destination, source)` pairs of the cyclic shift.
    pub fn moves(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let k = self.order.len();
        (0..k).map(move |i| (self.order[i], self.order[(i + 1) % k]))
    }

    /// Source position for every position of the row.
    pub fn source_map(&self) -> Vec<usize> {
        let mut map: Vec<usize> = (0..self.labels.len()).collect();
        for (dst, src) in self.moves() {
            map[dst] = src;
        }
        map
    }
}

/// `max(2, round(rate * valid))`, capped at `valid`.
pub fn shuffle_count(valid: usize, rate: f64) -> usize {
    let k = libm::round(rate * valid as f64) as usize;
    k.max(2).min(valid)
}

/// Chooses `shuffle_count` distinct positions from `valid` uniformly; their
/// random draw order defines the cycle.
pub fn sample_shuffle_plan(valid: &[usize], len: usize, rate: f64, rng: &mut SeededRng) -> Result<ShufflePlan> {
    if valid.len() < 2 {
        return Err(Error::InvalidArgument(format!("ShED needs at least 2 valid positions, got {}", valid.len())));
    }
    let k = shuffle_count(valid.len(), rate);
    let mut pool = valid.to_vec();
    // partial Fisher-Yates: the first k entries are a uniform ordered sample
    for i in 0..k {
        let j = i + rng.below(pool.len() - i);
        pool.swap(i, j);
    }
    pool.truncate(k);
    ShufflePlan::from_order(pool, len)
}

/// Moves `d`-wide vectors of one row according to `plan`.
pub fn apply_shuffle<T: Copy>(row: &[T], d: usize, mask: &[bool], plan: &ShufflePlan) -> Result<Vec<T>> {
    let len = mask.len();
    if row.len() != len * d || plan.labels.len() != len {
        return Err(Error::Shape(format!("shuffle plan for {} positions applied to {len}", plan.labels.len())));
    }
    for &p in &plan.order {
        if p >= len || !mask[p] {
            return Err(Error::BadShuffleIndex { index: p });
        }
    }
    let mut out = row.to_vec();
    for (dst, src) in plan.moves() {
        out[dst * d..(dst + 1) * d].copy_from_slice(&row[src * d..(src + 1) * d]);
    }
    Ok(out)
}

/// Gradient of [`apply_shuffle`] with respect to the original row.
pub fn apply_shuffle_backward<T: Copy>(d_out: &[T], d: usize, plan: &ShufflePlan) -> Vec<T> {
    let mut g = d_out.to_vec();
    for (dst, src) in plan.moves() {
        g[src * d..(src + 1) * d].copy_from_slice(&d_out[dst * d..(dst + 1) * d]);
    }
    g
}

/// Mean binary cross-entropy over valid positions, with its logit gradient.
pub fn shed_loss<T: Real>(logits: &[T], labels: &[u8], mask: &[bool]) -> Result<(f64, Vec<T>)> {
    if logits.len() != labels.len() || logits.len() != mask.len() {
        return Err(Error::Shape(format!(
            "{} logits, {} labels, {} mask entries",
            logits.len(),
            labels.len(),
            mask.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y > 1) {
        return Err(Error::NonBinaryLabel(bad));
    }
    let valid = mask.iter().filter(|&&m| m).count();
    if valid == 0 {
        return Err(Error::InvalidArgument("no valid positions for ShED".into()));
    }
    let inv = 1.0 / valid as f64;
    let mut loss = 0.0;
    let mut grad = vec![T::zero(); logits.len()];
    for i in 0..logits.len() {
        if !mask[i] {
            continue;
        }
        let x = logits[i].as_f64();
        let y = labels[i] as f64;
        // -[y log s(x) + (1 - y) log(1 - s(x))] = softplus(x) - x y
        loss += softplus(x) - x * y;
        grad[i] = T::from_f64_lossy((sigmoid(x) - y) * inv);
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("ShED loss".into()));
    }
    Ok((loss * inv, grad))
}
