//! Binning estimators of calibration error.
//!
//! Bins are the half-open intervals `((i-1)/B, i/B]` for `i = 1..=B`, with the
//! single point `0` folded into the first bin. The K-dimensional estimator
//! splits every coordinate the same way and keys occupied cells by their
//! index tuple; the `(B')^K` grid is never materialized.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prediction::PredictionSet;

/// Largest addressable K-dimensional grid.
pub const MAX_CELLS: u64 = 1 << 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinningScheme {
    dims: usize,
    bins_per_dim: usize,
    total_bins: u64,
}

impl BinningScheme {
    pub fn uniform_1d(bins: usize) -> Result<Self> {
        Self::hypercube(1, bins)
    }

    pub fn hypercube(dims: usize, bins_per_dim: usize) -> Result<Self> {
        if bins_per_dim == 0 {
            return Err(Error::invalid("bin count must be at least 1"));
        }
        if dims == 0 {
            return Err(Error::invalid("binning needs at least one dimension"));
        }
        let total = checked_pow(bins_per_dim as u64, dims as u32)
            .filter(|&t| t <= MAX_CELLS)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "{bins_per_dim}^{dims} cells exceeds the 2^48 cell-index space"
                ))
            })?;
        Ok(Self {
            dims,
            bins_per_dim,
            total_bins: total,
        })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn bins_per_dim(&self) -> usize {
        self.bins_per_dim
    }

    pub fn total_bins(&self) -> u64 {
        self.total_bins
    }

    /// Half-open interval `(lo, hi]` covered by 1-based bin `i` along one axis.
    pub fn interval(&self, i: usize) -> (f64, f64) {
        let b = self.bins_per_dim as f64;
        ((i - 1) as f64 / b, i as f64 / b)
    }

    /// Flat key of the cell holding `point` (one coordinate per dimension).
    fn cell_key(&self, point: impl Iterator<Item = f64>) -> u64 {
        let b = self.bins_per_dim as u64;
        let mut key = 0u64;
        let mut stride = 1u64;
        for x in point {
            key += (bin_index(x, self.bins_per_dim) as u64 - 1) * stride;
            stride = stride.wrapping_mul(b);
        }
        key
    }
}

/// 1-based bin holding `p`, exact with respect to the real value of `p`.
pub fn assign_bin_1d(p: f64, bins: usize) -> Result<usize> {
    if bins == 0 {
        return Err(Error::invalid("bin count must be at least 1"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("probability {p} outside [0, 1]")));
    }
    Ok(bin_index(p, bins))
}

fn bin_index(p: f64, bins: usize) -> usize {
    let b = bins as f64;
    let mut i = ((p * b).ceil() as usize).clamp(1, bins);
    // p*b - j with a single rounding has the exact sign of the real difference.
    while i > 1 && p.mul_add(b, -((i - 1) as f64)) <= 0.0 {
        i -= 1;
    }
    while i < bins && p.mul_add(b, -(i as f64)) > 0.0 {
        i += 1;
    }
    i
}

/// Per-bin summary of top-label predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStat {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean_confidence: Option<f64>,
    pub mean_hit: Option<f64>,
}

/// Reliability table for the top label.
pub fn bin_stats_1d(data: &PredictionSet, bins: usize) -> Result<Vec<BinStat>> {
    let acc = accumulate_top_label(data, bins)?;
    let scheme = BinningScheme::uniform_1d(bins)?;
    Ok(acc
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let (lo, hi) = scheme.interval(i + 1);
            let m = a.count as f64;
            BinStat {
                lo,
                hi,
                count: a.count,
                mean_confidence: (a.count > 0).then(|| a.conf / m),
                mean_hit: (a.count > 0).then(|| a.hit / m),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, Default)]
struct TopBin {
    count: usize,
    conf: f64,
    hit: f64,
}

fn accumulate_top_label(data: &PredictionSet, bins: usize) -> Result<Vec<TopBin>> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if bins == 0 {
        return Err(Error::invalid("bin count must be at least 1"));
    }
    let mut acc = vec![TopBin::default(); bins];
    for i in 0..data.len() {
        let top = data.top(i);
        let b = &mut acc[bin_index(top.confidence, bins) - 1];
        b.count += 1;
        b.conf += top.confidence;
        if top.top_label == data.label(i) {
            b.hit += 1.0;
        }
    }
    Ok(acc)
}

/// Top-label ECE: `sum_i (|I_i|/n) |mean conf_i - mean hit_i|`, empty bins skipped.
pub fn ece_top_label(data: &PredictionSet, bins: usize) -> Result<f64> {
    let acc = accumulate_top_label(data, bins)?;
    let n = data.len() as f64;
    Ok(acc
        .iter()
        .filter(|b| b.count > 0)
        .map(|b| {
            let m = b.count as f64;
            (m / n) * (b.conf / m - b.hit / m).abs()
        })
        .sum())
}

/// Top-label ECE written as `sum_i |E_n[(1{y=C} - f_C) 1{f_C in I_i}]|`.
pub fn ece_top_label_reformulated(data: &PredictionSet, bins: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if bins == 0 {
        return Err(Error::invalid("bin count must be at least 1"));
    }
    let n = data.len() as f64;
    let mut residual = vec![0.0; bins];
    for i in 0..data.len() {
        let top = data.top(i);
        let hit = if top.top_label == data.label(i) { 1.0 } else { 0.0 };
        residual[bin_index(top.confidence, bins) - 1] += hit - top.confidence;
    }
    Ok(residual.iter().map(|r| (r / n).abs()).sum())
}

/// All-class ECE over the `(B')^K` hypercube grid.
pub fn ece_full_k(data: &PredictionSet, bins_per_dim: usize) -> Result<f64> {
    let classes: Vec<usize> = (0..data.num_classes()).collect();
    ece_on_classes(data, &classes, bins_per_dim)
}

/// All-class ECE restricted to the coordinates in `class_subset`.
///
/// Coordinates are fixed classes, not ranks: `{c}` bins `f_c` and compares it
/// with `1{y = c}` regardless of which class is the argmax.
pub fn ece_partial_k(data: &PredictionSet, class_subset: &[usize], bins_per_dim: usize) -> Result<f64> {
    if class_subset.is_empty() {
        return Err(Error::invalid("class subset is empty"));
    }
    let k = data.num_classes();
    for (j, &c) in class_subset.iter().enumerate() {
        if c >= k {
            return Err(Error::invalid(format!("class {c} out of range for {k} classes")));
        }
        if class_subset[..j].contains(&c) {
            return Err(Error::invalid(format!("class {c} listed twice")));
        }
    }
    ece_on_classes(data, class_subset, bins_per_dim)
}

fn ece_on_classes(data: &PredictionSet, classes: &[usize], bins_per_dim: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let scheme = BinningScheme::hypercube(classes.len(), bins_per_dim)?;
    let d = classes.len();
    // Per cell: count followed by sum of (e_y - f) per coordinate.
    let mut cells: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for i in 0..data.len() {
        let row = data.row(i);
        let y = data.label(i);
        let key = scheme.cell_key(classes.iter().map(|&c| row[c]));
        let cell = cells.entry(key).or_insert_with(|| vec![0.0; d]);
        for (slot, &c) in cell.iter_mut().zip(classes) {
            let e = if c == y { 1.0 } else { 0.0 };
            *slot += e - row[c];
        }
    }
    let n = data.len() as f64;
    Ok(cells
        .values()
        .map(|resid| resid.iter().map(|r| r.abs()).sum::<f64>() / n)
        .sum())
}

/// `|ECE(a) - ECE(b)|` at a shared bin count.
pub fn ece_gap(a: &PredictionSet, b: &PredictionSet, bins: usize) -> Result<f64> {
    if a.num_classes() != b.num_classes() {
        return Err(Error::DimensionMismatch {
            expected: a.num_classes(),
            actual: b.num_classes(),
        });
    }
    Ok((ece_top_label(a, bins)? - ece_top_label(b, bins)?).abs())
}

/// `max(1, floor(n^(1/3)))`.
pub fn optimal_bins_1d(n: usize) -> usize {
    integer_root(n as u64, 3).max(1) as usize
}

/// `max(1, floor(n^(1/(K+2))))` bins along each coordinate.
pub fn optimal_bins_per_dim_k(n: usize, classes: usize) -> usize {
    integer_root(n as u64, classes as u32 + 2).max(1) as usize
}

/// Largest `r` with `r^k <= n`.
pub fn integer_root(n: u64, k: u32) -> u64 {
    assert!(k >= 1, "root order must be positive");
    if n < 2 || k == 1 {
        return n;
    }
    let (mut lo, mut hi) = (1u64, 1u64 << (64 / k + 1).min(63));
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        match checked_pow(mid, k) {
            Some(p) if p <= n => lo = mid,
            _ => hi = mid - 1,
        }
    }
    lo
}

fn checked_pow(base: u64, exp: u32) -> Option<u64> {
    let mut acc = 1u64;
    for _ in 0..exp {
        acc = acc.checked_mul(base)?;
    }
    Some(acc)
}
