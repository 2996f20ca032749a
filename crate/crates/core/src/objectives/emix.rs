//! e-Mix: mixup applied to content embeddings, trained with a contrastive
//! loss whose targets are virtual labels.
//!
//! For a batch `e_1..e_N`, mixed rows are `x~_i = lam_i e_i + (1 - lam_i) e_pi(i)`.
//! Anchor features `f(e_i)` are scored against every mixed feature `f(x~_n)`
//! by cosine similarity over a temperature, and the softmax over `n` is
//! matched to row `i` of the virtual-label matrix.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::rng::SeededRng;
use crate::{Error, Real, Result};

/// Partner permutation and per-example mixing coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct MixPlan {
    pub pi: Vec<usize>,
    pub lam: Vec<f64>,
}

impl MixPlan {
    /// Validates that `pi` is a bijection and every `lam` lies in `[0.5, 1]`.
    pub fn new(pi: Vec<usize>, lam: Vec<f64>) -> Result<Self> {
        let n = pi.len();
        if lam.len() != n {
            return Err(Error::Shape(format!("{n} partners but {} coefficients", lam.len())));
        }
        let mut seen = vec![false; n];
        for &p in &pi {
            if p >= n || core::mem::replace(&mut seen[p], true) {
                return Err(Error::InvalidArgument("mix permutation is not a bijection".into()));
            }
        }
        if let Some(bad) = lam.iter().find(|l| !(0.5..=1.0).contains(*l)) {
            return Err(Error::InvalidArgument(format!("mixing coefficient {bad} outside [0.5, 1]")));
        }
        Ok(Self { pi, lam })
    }

    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }

    pub fn inverse(&self) -> Vec<usize> {
        let mut inv = vec![0; self.pi.len()];
        for (i, &p) in self.pi.iter().enumerate() {
            inv[p] = i;
        }
        inv
    }
}

/// Draws a uniformly random derangement and `lam_i ~ Uniform(0.5, 1)`.
pub fn sample_mix_plan(n: usize, rng: &mut SeededRng) -> Result<MixPlan> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("e-Mix needs at least 2 examples, got {n}")));
    }
    // Rejection from uniform permutations is uniform over derangements and
    // accepts with probability ~1/e.
    let mut pi: Vec<usize> = (0..n).collect();
    loop {
        rng.shuffle(&mut pi);
        if pi.iter().enumerate().all(|(i, &p)| i != p) {
            break;
        }
    }
    let lam = (0..n).map(|_| rng.uniform_range(0.5, 1.0)).collect();
    Ok(MixPlan { pi, lam })
}

/// Which mixed example receives a row's off-diagonal target mass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum LabelMode {
    /// `v[i,i] = lam_i`, `v[i,pi(i)] = 1 - lam_i`.
    #[default]
    Literal,
    /// Off-diagonal mass goes to `pi^-1(i)`, the mixed example that actually
    /// contains `e_i`, with weight `1 - lam_{pi^-1(i)}`; the row is then
    /// renormalized to sum to one.
    Consistent,
}

impl LabelMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelMode::Literal => "literal",
            LabelMode::Consistent => "consistent",
        }
    }
}

impl fmt::Display for LabelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LabelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(LabelMode::Literal),
            "consistent" => Ok(LabelMode::Consistent),
            _ => Err(Error::InvalidArgument(format!("unknown label mode `{s}`; expected literal or consistent"))),
        }
    }
}

/// Row-stochastic `N x N` target matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualLabels {
    pub n: usize,
    pub v: Vec<f64>,
}

impl VirtualLabels {
    pub fn identity(n: usize) -> Self {
        let mut v = vec![0.0; n * n];
        (0..n).for_each(|i| v[i * n + i] = 1.0);
        Self { n, v }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.v[i * self.n..(i + 1) * self.n]
    }
}

pub fn virtual_labels(plan: &MixPlan, mode: LabelMode) -> VirtualLabels {
    let n = plan.len();
    let mut v = vec![0.0; n * n];
    match mode {
        LabelMode::Literal => {
            for i in 0..n {
                v[i * n + i] += plan.lam[i];
                v[i * n + plan.pi[i]] += 1.0 - plan.lam[i];
            }
        }
        LabelMode::Consistent => {
            let inv = plan.inverse();
            for i in 0..n {
                let partner = inv[i];
                let own = plan.lam[i];
                let other = 1.0 - plan.lam[partner];
                let z = own + other;
                v[i * n + i] += own / z;
                v[i * n + partner] += other / z;
            }
        }
    }
    VirtualLabels { n, v }
}

/// Mixes whole rows (`batch x row_len` values); inputs are left untouched.
pub fn apply_mix<T: Real>(values: &[T], batch: usize, row_len: usize, plan: &MixPlan) -> Result<Vec<T>> {
    if plan.len() != batch {
        return Err(Error::Shape(format!("mix plan for {} examples applied to batch of {batch}", plan.len())));
    }
    if values.len() != batch * row_len {
        return Err(Error::Shape(format!("expected {batch} rows of {row_len} values, got {}", values.len())));
    }
    let mut out = vec![T::zero(); values.len()];
    for i in 0..batch {
        let lam = T::from_f64_lossy(plan.lam[i]);
        let rest = T::from_f64_lossy(1.0 - plan.lam[i]);
        let own = &values[i * row_len..(i + 1) * row_len];
        let other = &values[plan.pi[i] * row_len..(plan.pi[i] + 1) * row_len];
        for ((o, &a), &b) in out[i * row_len..(i + 1) * row_len].iter_mut().zip(own).zip(other) {
            *o = lam * a + rest * b;
        }
    }
    Ok(out)
}

/// Gradient of [`apply_mix`] with respect to its input rows.
pub fn apply_mix_backward<T: Real>(d_mixed: &[T], batch: usize, row_len: usize, plan: &MixPlan) -> Vec<T> {
    let mut d = vec![T::zero(); d_mixed.len()];
    for i in 0..batch {
        let lam = T::from_f64_lossy(plan.lam[i]);
        let rest = T::from_f64_lossy(1.0 - plan.lam[i]);
        let g = &d_mixed[i * row_len..(i + 1) * row_len];
        for (t, &x) in d[i * row_len..(i + 1) * row_len].iter_mut().zip(g) {
            *t += lam * x;
        }
        let p = plan.pi[i];
        for (t, &x) in d[p * row_len..(p + 1) * row_len].iter_mut().zip(g) {
            *t += rest * x;
        }
    }
    d
}

/// Loss value and gradients for both feature branches.
#[derive(Debug, Clone, PartialEq)]
pub struct EmixLoss<T> {
    pub loss: f64,
    pub d_anchor: Vec<T>,
    pub d_mixed: Vec<T>,
}

/// Mean over anchors of `-sum_n v[i,n] log softmax_n(cos(a_i, m_n) / tau)`.
pub fn emix_loss<T: Real>(
    anchor: &[T],
    mixed: &[T],
    n: usize,
    dim: usize,
    labels: &VirtualLabels,
    temperature: f64,
) -> Result<EmixLoss<T>> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {temperature}")));
    }
    if anchor.len() != n * dim || mixed.len() != n * dim || labels.n != n {
        return Err(Error::Shape(format!("e-Mix expects {n}x{dim} features and {n}x{n} labels")));
    }
    let (a_hat, a_norm) = normalize_rows(anchor, n, dim, "anchor")?;
    let (m_hat, m_norm) = normalize_rows(mixed, n, dim, "mixed")?;
    let inv_t = 1.0 / temperature;
    let mut d_logits = vec![0.0f64; n * n];
    let mut loss = 0.0;
    for i in 0..n {
        let logits: Vec<f64> = (0..n)
            .map(|k| inv_t * a_hat[i * dim..(i + 1) * dim].iter().zip(&m_hat[k * dim..(k + 1) * dim]).map(|(x, y)| x * y).sum::<f64>())
            .collect();
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite("e-Mix logits".into()));
        }
        let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + libm::log(logits.iter().map(|&l| libm::exp(l - mx)).sum::<f64>());
        let row = labels.row(i);
        let mass: f64 = row.iter().sum();
        for k in 0..n {
            loss -= row[k] * (logits[k] - lse);
            let p = libm::exp(logits[k] - lse);
            d_logits[i * n + k] = (p * mass - row[k]) / n as f64;
        }
    }
    loss /= n as f64;

    // logits = A_hat M_hat^T / tau
    let mut d_ahat = vec![0.0f64; n * dim];
    let mut d_mhat = vec![0.0f64; n * dim];
    for i in 0..n {
        for k in 0..n {
            let g = d_logits[i * n + k] * inv_t;
            if g == 0.0 {
                continue;
            }
            for c in 0..dim {
                d_ahat[i * dim + c] += g * m_hat[k * dim + c];
                d_mhat[k * dim + c] += g * a_hat[i * dim + c];
            }
        }
    }
    Ok(EmixLoss {
        loss,
        d_anchor: normalize_backward(&a_hat, &a_norm, &d_ahat, n, dim),
        d_mixed: normalize_backward(&m_hat, &m_norm, &d_mhat, n, dim),
    })
}

fn normalize_rows<T: Real>(x: &[T], n: usize, dim: usize, branch: &'static str) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut hat = vec![0.0; n * dim];
    let mut norms = vec![0.0; n];
    for r in 0..n {
        let row = &x[r * dim..(r + 1) * dim];
        let norm = libm::sqrt(row.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>());
        if !norm.is_finite() {
            return Err(Error::NonFinite(format!("{branch} features")));
        }
        if norm == 0.0 {
            return Err(Error::ZeroNormFeature { row: r, branch });
        }
        norms[r] = norm;
        for (h, v) in hat[r * dim..(r + 1) * dim].iter_mut().zip(row) {
            *h = v.as_f64() / norm;
        }
    }
    Ok((hat, norms))
}

/// `d x = (d x_hat - x_hat <x_hat, d x_hat>) / |x|`.
fn normalize_backward<T: Real>(hat: &[f64], norms: &[f64], d_hat: &[f64], n: usize, dim: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(n * dim);
    for r in 0..n {
        let h = &hat[r * dim..(r + 1) * dim];
        let g = &d_hat[r * dim..(r + 1) * dim];
        let proj: f64 = h.iter().zip(g).map(|(a, b)| a * b).sum();
        out.extend(h.iter().zip(g).map(|(&a, &b)| T::from_f64_lossy((b - a * proj) / norms[r])));
    }
    out
}
