//! Evaluation metrics. Accuracy and AUROC are in percent.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Percentage of rows whose argmax matches the label.
pub fn accuracy(scores: &[f64], num_classes: usize, labels: &[usize]) -> Result<f64> {
    if num_classes == 0 || scores.len() != labels.len() * num_classes {
        return Err(Error::Shape(format!("{} scores for {} labels x {num_classes} classes", scores.len(), labels.len())));
    }
    if labels.is_empty() {
        return Err(Error::InvalidArgument("accuracy of an empty set".into()));
    }
    let hits = labels
        .iter()
        .zip(scores.chunks_exact(num_classes))
        .filter(|(&y, row)| argmax(row) == y)
        .count();
    Ok(100.0 * hits as f64 / labels.len() as f64)
}

/// First index of the maximum.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half, in percent.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores, {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("AUROC scores".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateTargets("AUROC needs both positive and negative labels".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the number of concordant pairs, so ties stay integral
    let mut twice: u64 = 0;
    let mut neg_below: u64 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            j += 1;
        }
        let p = idx[i..j].iter().filter(|&&k| labels[k]).count() as u64;
        let n = (j - i) as u64 - p;
        twice += p * (2 * neg_below + n);
        neg_below += n;
        i = j;
    }
    Ok(twice as f64 / (2 * pos * neg) as f64 * 100.0)
}

/// Mean of per-column AUROC over a `rows x outputs` score matrix.
pub fn mean_auroc(scores: &[f64], labels: &[bool], outputs: usize) -> Result<f64> {
    if outputs == 0 || scores.len() != labels.len() || scores.len() % outputs != 0 {
        return Err(Error::Shape(format!("{} scores, {} labels, {outputs} outputs", scores.len(), labels.len())));
    }
    let mut total = 0.0;
    for c in 0..outputs {
        let s: Vec<f64> = scores.iter().skip(c).step_by(outputs).copied().collect();
        let l: Vec<bool> = labels.iter().skip(c).step_by(outputs).copied().collect();
        total += auroc(&s, &l)?;
    }
    Ok(total / outputs as f64)
}

/// Product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("{} vs {} values", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument("correlation needs at least two points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 {
        return Err(Error::ZeroVariance("x"));
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance("y"));
    }
    let r = sxy / (libm::sqrt(sxx) * libm::sqrt(syy));
    if !r.is_finite() {
        return Err(Error::NonFinite("correlation".into()));
    }
    Ok(r.clamp(-1.0, 1.0))
}

/// Pearson correlation of fractional ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("{} vs {} values", x.len(), y.len())));
    }
    pearson(&fractional_ranks(x)?, &fractional_ranks(y)?)
}

/// 1-based ranks; tied values share the average of their ranks.
pub fn fractional_ranks(x: &[f64]) -> Result<Vec<f64>> {
    if x.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("rank input".into()));
    }
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && x[idx[j]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    Ok(ranks)
}
