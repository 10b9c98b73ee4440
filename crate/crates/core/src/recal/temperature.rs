use crate::error::Result;
use crate::prediction::{logsumexp, PredictionSet};

use super::RecalMap;

const LOG_T_RANGE: (f64, f64) = (-5.0, 5.0);
const TOL: f64 = 1e-6;

/// Fit a temperature by golden-section search on `ln t` minimizing the
/// cross-entropy of the recalibrated predictions.
///
/// Data whose labels are all one class has no finite optimum; `t = 1` is
/// returned with a warning.
pub fn temperature_scaling_fit(data: &PredictionSet) -> Result<RecalMap> {
    if data.is_empty() {
        return Err(crate::Error::EmptyDataset);
    }
    let first = data.label(0);
    if data.labels().iter().all(|&y| y == first) {
        log::warn!("temperature scaling on single-class data; returning t = 1");
        return Ok(RecalMap::Temperature { t: 1.0 });
    }
    let features = Features::new(data);
    let s = golden_section(|s| features.nll((-s).exp()), LOG_T_RANGE.0, LOG_T_RANGE.1, TOL);
    Ok(RecalMap::Temperature { t: s.exp() })
}

struct Features {
    k: usize,
    x: Vec<f64>,
    labels: Vec<usize>,
}

impl Features {
    fn new(data: &PredictionSet) -> Self {
        let k = data.num_classes();
        let mut x = vec![0.0; data.len() * k];
        for (i, row) in x.chunks_exact_mut(k).enumerate() {
            data.log_features(i, row);
        }
        Self {
            k,
            x,
            labels: data.labels().to_vec(),
        }
    }

    /// Mean NLL of `softmax(inv_t * x)`.
    fn nll(&self, inv_t: f64) -> f64 {
        let mut z = vec![0.0; self.k];
        let total: f64 = self
            .x
            .chunks_exact(self.k)
            .zip(&self.labels)
            .map(|(row, &y)| {
                for (zj, xj) in z.iter_mut().zip(row) {
                    *zj = xj * inv_t;
                }
                logsumexp(&z) - z[y]
            })
            .sum();
        total / self.labels.len() as f64
    }
}

pub(crate) fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recal::softmax_cross_entropy;
    use crate::synthetic::{gen_multiclass, MulticlassMap, SyntheticSpecK};

    fn fitted_t(data: &PredictionSet) -> f64 {
        match temperature_scaling_fit(data).unwrap() {
            RecalMap::Temperature { t } => t,
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn golden_section_finds_parabola_minimum() {
        let x = golden_section(|x| (x - 1.234).powi(2), -5.0, 5.0, 1e-9);
        assert!((x - 1.234).abs() < 1e-8);
    }

    #[test]
    fn calibrated_data_keeps_unit_temperature() {
        let spec = SyntheticSpecK::symmetric(4, 1.0, MulticlassMap::Identity, 10_000, 21);
        let t = fitted_t(&gen_multiclass(&spec).unwrap());
        assert!((t - 1.0).abs() < 0.05, "t = {t}");
    }

    #[test]
    fn recovers_distortion_temperature() {
        let spec = SyntheticSpecK::symmetric(
            4,
            1.0,
            MulticlassMap::TemperatureDistort { temperature: 2.0 },
            10_000,
            22,
        );
        let t = fitted_t(&gen_multiclass(&spec).unwrap());
        assert!((t - 2.0).abs() < 0.1, "t = {t}");
    }

    #[test]
    fn optimum_beats_bracket_ends() {
        let spec = SyntheticSpecK::symmetric(
            3,
            1.0,
            MulticlassMap::TemperatureDistort { temperature: 1.5 },
            2_000,
            23,
        );
        let data = gen_multiclass(&spec).unwrap();
        let map = temperature_scaling_fit(&data).unwrap();
        let best = softmax_cross_entropy(&map.apply_to(&data).unwrap()).unwrap();
        for s in [LOG_T_RANGE.0, LOG_T_RANGE.1] {
            let end = RecalMap::Temperature { t: f64::exp(s) };
            let v = softmax_cross_entropy(&end.apply_to(&data).unwrap()).unwrap();
            assert!(v > best);
        }
    }

    #[test]
    fn single_class_falls_back_to_identity() {
        let data = PredictionSet::from_rows(&[vec![0.6, 0.4], vec![0.9, 0.1]], vec![0, 0]).unwrap();
        assert_eq!(fitted_t(&data), 1.0);
    }
}
