//! Prediction sets and simplex helpers shared by every estimator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};

/// Row sums must be within this distance of 1.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Floor applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// `n` probability vectors over `k` classes plus integer labels.
///
/// Rows are stored row-major. Construction validates every row and
/// renormalizes rows whose sum is within [`SIMPLEX_TOL`] of one. If the set
/// was loaded from logits, they are kept alongside and used by recalibration
/// maps in place of log-probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    k: usize,
    probs: Vec<f64>,
    labels: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    logits: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopPrediction {
    pub top_label: usize,
    pub confidence: f64,
}

impl PredictionSet {
    /// Build from a flat row-major buffer of `labels.len() * k` probabilities.
    pub fn from_flat(k: usize, mut probs: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        let violations = validate_prediction_set(k, &probs, &labels);
        if !violations.is_empty() {
            return Err(Error::Validation(violations));
        }
        for row in probs.chunks_exact_mut(k) {
            let s: f64 = row.iter().sum();
            if s != 1.0 {
                row.iter_mut().for_each(|p| *p /= s);
            }
        }
        Ok(Self {
            k,
            probs,
            labels,
            logits: None,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<usize>) -> Result<Self> {
        let k = rows.first().map(Vec::len).unwrap_or(0);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != k) {
            return Err(Error::Validation(vec![Violation {
                row: Some(i),
                message: format!("expected {k} entries, found {}", r.len()),
            }]));
        }
        Self::from_flat(k, rows.concat(), labels)
    }

    /// Build from raw logits; probabilities are their softmax.
    pub fn from_logits(k: usize, logits: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if k < 2 {
            return Err(Error::invalid(format!("need at least 2 classes, got {k}")));
        }
        if logits.len() != labels.len() * k {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * k,
                actual: logits.len(),
            });
        }
        if let Some(i) = logits.iter().position(|z| !z.is_finite()) {
            return Err(Error::Validation(vec![Violation {
                row: Some(i / k),
                message: "non-finite logit".into(),
            }]));
        }
        let probs = logits.chunks_exact(k).flat_map(softmax).collect();
        let mut set = Self::from_flat(k, probs, labels)?;
        set.logits = Some(logits);
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.probs.chunks_exact(self.k)
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn logits(&self) -> Option<&[f64]> {
        self.logits.as_deref()
    }

    /// Recalibration features for row `i`: the stored logits, or floored log-probabilities.
    pub fn log_features(&self, i: usize, out: &mut [f64]) {
        match &self.logits {
            Some(z) => out.copy_from_slice(&z[i * self.k..(i + 1) * self.k]),
            None => {
                for (o, p) in out.iter_mut().zip(self.row(i)) {
                    *o = p.max(PROB_FLOOR).ln();
                }
            }
        }
    }

    /// Top label and confidence of row `i`; ties go to the lowest index.
    pub fn top(&self, i: usize) -> TopPrediction {
        argmax(self.row(i))
    }

    /// Rows selected by `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut probs = Vec::with_capacity(idx.len() * self.k);
        let mut labels = Vec::with_capacity(idx.len());
        let mut logits = self
            .logits
            .as_ref()
            .map(|_| Vec::with_capacity(idx.len() * self.k));
        for &i in idx {
            probs.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
            if let (Some(out), Some(z)) = (logits.as_mut(), self.logits.as_ref()) {
                out.extend_from_slice(&z[i * self.k..(i + 1) * self.k]);
            }
        }
        Self {
            k: self.k,
            probs,
            labels,
            logits,
        }
    }

    /// Replace the probabilities, keeping labels. Used by recalibration maps
    /// whose outputs are simplex points by construction.
    pub(crate) fn with_probs(&self, probs: Vec<f64>) -> Self {
        debug_assert_eq!(probs.len(), self.probs.len());
        Self {
            k: self.k,
            probs,
            labels: self.labels.clone(),
            logits: None,
        }
    }

    /// Fraction of rows whose top label equals the true label.
    pub fn accuracy(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let hits = (0..self.len())
            .filter(|&i| self.top(i).top_label == self.labels[i])
            .count();
        hits as f64 / self.len() as f64
    }
}

/// Every violated invariant of a raw `(k, probs, labels)` triple.
pub fn validate_prediction_set(k: usize, probs: &[f64], labels: &[usize]) -> Vec<Violation> {
    let mut out = Vec::new();
    if k < 2 {
        out.push(Violation {
            row: None,
            message: format!("need at least 2 classes, got {k}"),
        });
        return out;
    }
    if probs.len() != labels.len() * k {
        out.push(Violation {
            row: None,
            message: format!(
                "{} probabilities for {} labels and {k} classes",
                probs.len(),
                labels.len()
            ),
        });
        return out;
    }
    for (i, (row, &label)) in probs.chunks_exact(k).zip(labels).enumerate() {
        if let Err(message) = check_row(row) {
            out.push(Violation {
                row: Some(i),
                message,
            });
        }
        if label >= k {
            out.push(Violation {
                row: Some(i),
                message: format!("label {label} out of range for {k} classes"),
            });
        }
    }
    out
}

fn check_row(row: &[f64]) -> std::result::Result<(), String> {
    if let Some(p) = row.iter().find(|p| !p.is_finite() || **p < 0.0 || **p > 1.0) {
        return Err(format!("entry {p} outside [0, 1]"));
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > SIMPLEX_TOL {
        return Err(format!("row sums to {s}"));
    }
    Ok(())
}

pub(crate) fn check_simplex(row: &[f64]) -> Result<()> {
    if row.len() < 2 {
        return Err(Error::invalid("probability vector needs at least 2 entries"));
    }
    check_row(row).map_err(|message| Error::Validation(vec![Violation { row: None, message }]))
}

/// Argmax and max of a simplex point, ties broken to the lowest index.
pub fn top_prediction(row: &[f64]) -> Result<TopPrediction> {
    check_simplex(row)?;
    Ok(argmax(row))
}

fn argmax(row: &[f64]) -> TopPrediction {
    let mut best = 0;
    for (j, &p) in row.iter().enumerate().skip(1) {
        if p > row[best] {
            best = j;
        }
    }
    TopPrediction {
        top_label: best,
        confidence: row[best],
    }
}

pub fn one_hot(label: usize, k: usize) -> Result<Vec<f64>> {
    if label >= k {
        return Err(Error::invalid(format!(
            "label {label} out of range for {k} classes"
        )));
    }
    let mut v = vec![0.0; k];
    v[label] = 1.0;
    Ok(v)
}

pub fn logsumexp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + z.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; z.len()];
    softmax_into(z, &mut out);
    out
}

/// Numerically stable softmax; the output sums to one up to rounding.
pub fn softmax_into(z: &[f64], out: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, x) in out.iter_mut().zip(z) {
        *o = (x - m).exp();
        s += *o;
    }
    out.iter_mut().for_each(|o| *o /= s);
}

/// Neumaier-compensated sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: CompensatedSum) {
        self.add(other.sum);
        self.add(other.comp);
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::default();
        iter.into_iter().for_each(|x| s.add(x));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn top_prediction_examples() {
        let t = top_prediction(&[0.2, 0.7, 0.1]).unwrap();
        assert_eq!((t.top_label, t.confidence), (1, 0.7));
        let t = top_prediction(&[0.5, 0.5]).unwrap();
        assert_eq!((t.top_label, t.confidence), (0, 0.5));
        let t = top_prediction(&[1.0, 0.0, 0.0]).unwrap();
        assert_eq!((t.top_label, t.confidence), (0, 1.0));
    }

    #[test]
    fn top_prediction_rejects_off_simplex() {
        assert!(top_prediction(&[0.5, 0.4]).is_err());
        assert!(top_prediction(&[1.2, -0.2]).is_err());
        assert!(top_prediction(&[1.0]).is_err());
    }

    #[test]
    fn one_hot_examples() {
        assert_eq!(one_hot(1, 3).unwrap(), vec![0.0, 1.0, 0.0]);
        assert_eq!(one_hot(0, 2).unwrap(), vec![1.0, 0.0]);
        assert_eq!(one_hot(4, 5).unwrap(), vec![0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(one_hot(3, 3).is_err());
    }

    #[test]
    fn validation_reports_rows() {
        let probs = vec![0.5, 0.5, 0.6, 0.3, 0.2, 0.8];
        let v = validate_prediction_set(2, &probs, &[0, 1, 2]);
        assert_eq!(v.len(), 2);
        assert_eq!(v[0].row, Some(1));
        assert!(v[0].message.contains("sums to"));
        assert_eq!(v[1].row, Some(2));
        assert!(v[1].message.contains("label 2"));

        assert!(validate_prediction_set(2, &[0.3, 0.7], &[1]).is_empty());
        assert!(!validate_prediction_set(1, &[1.0], &[0]).is_empty());
    }

    #[test]
    fn near_simplex_rows_are_renormalized() {
        let set = PredictionSet::from_flat(2, vec![0.3, 0.7 + 5e-10], vec![0]).unwrap();
        let s: f64 = set.row(0).iter().sum();
        assert!((s - 1.0).abs() < 1e-15);
        assert!(PredictionSet::from_flat(2, vec![0.3, 0.6], vec![0]).is_err());
    }

    #[test]
    fn logits_softmax() {
        let set = PredictionSet::from_logits(2, vec![2.0, 0.0], vec![0]).unwrap();
        let e2 = 2f64.exp();
        assert!((set.row(0)[0] - e2 / (e2 + 1.0)).abs() < 1e-15);
        assert!((set.row(0)[0] - 0.880797).abs() < 1e-6);
        assert!((set.row(0)[1] - 0.119203).abs() < 1e-6);
        let mut f = [0.0; 2];
        set.log_features(0, &mut f);
        assert_eq!(f, [2.0, 0.0]);
    }

    #[test]
    fn compensated_sum_beats_naive() {
        let xs = [1e16, 1.0, -1e16, 1.0];
        let s: CompensatedSum = xs.iter().copied().collect();
        assert_eq!(s.value(), 2.0);
    }

    fn simplex_row(k: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, k).prop_filter_map("nonzero mass", |w| {
            let s: f64 = w.iter().sum();
            (s > 1e-3).then(|| w.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn top_invariant_under_zero_padding(row in (2usize..6).prop_flat_map(simplex_row), pad in 1usize..4) {
            let a = top_prediction(&row).unwrap();
            let mut padded = row.clone();
            padded.extend(std::iter::repeat_n(0.0, pad));
            let b = top_prediction(&padded).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn one_hot_is_its_own_top(k in 2usize..12, l in 0usize..12) {
            prop_assume!(l < k);
            let v = one_hot(l, k).unwrap();
            prop_assert_eq!(v.iter().sum::<f64>(), 1.0);
            let t = top_prediction(&v).unwrap();
            prop_assert_eq!((t.top_label, t.confidence), (l, 1.0));
        }

        #[test]
        fn top_confidence_at_least_uniform(row in (2usize..8).prop_flat_map(simplex_row)) {
            let t = top_prediction(&row).unwrap();
            prop_assert!(t.confidence >= 1.0 / row.len() as f64 - 1e-12);
        }
    }
}
