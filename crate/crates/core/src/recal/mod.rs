//! Post-hoc recalibration maps and the PAC-Bayes recalibration trainer.
//!
//! A map acts on per-class log-features (stored logits when available,
//! otherwise floored log-probabilities) and returns `softmax(scale(x) + offset)`.
//! Temperature maps are parameterized by `ln t` so that a Gaussian posterior
//! over the parameter vector always yields a positive temperature.

mod pbr;
mod temperature;

pub use pbr::{
    pbr_gradient, pbr_objective, train_pbr, GaussianPosterior, PbrConfig, PbrFit, PbrGradient,
    PbrObjective,
};
pub use temperature::temperature_scaling_fit;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prediction::{check_simplex, softmax_into, PredictionSet, PROB_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapFamily {
    Temperature,
    VectorScale,
    Affine,
}

impl MapFamily {
    /// Length of the flattened parameter vector for `k` classes.
    pub fn param_count(&self, k: usize) -> usize {
        match self {
            MapFamily::Temperature => 1,
            MapFamily::VectorScale => 2 * k,
            MapFamily::Affine => k * k + k,
        }
    }

    /// Parameters of the identity map.
    pub fn identity_params(&self, k: usize) -> Vec<f64> {
        match self {
            MapFamily::Temperature => vec![0.0],
            MapFamily::VectorScale => {
                let mut v = vec![1.0; k];
                v.extend(std::iter::repeat_n(0.0, k));
                v
            }
            MapFamily::Affine => {
                let mut v = vec![0.0; k * k + k];
                for j in 0..k {
                    v[j * k + j] = 1.0;
                }
                v
            }
        }
    }
}

impl std::str::FromStr for MapFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "temperature" => Ok(MapFamily::Temperature),
            "vector_scale" | "vector" => Ok(MapFamily::VectorScale),
            "affine" | "matrix" => Ok(MapFamily::Affine),
            other => Err(Error::invalid(format!("unknown map family {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum RecalMap {
    Temperature { t: f64 },
    VectorScale { w: Vec<f64>, b: Vec<f64> },
    /// `w` is `k x k`, row-major.
    Affine { w: Vec<f64>, b: Vec<f64> },
}

impl RecalMap {
    pub fn identity(family: MapFamily, k: usize) -> Self {
        Self::from_params(family, k, &family.identity_params(k)).expect("identity params are valid")
    }

    pub fn family(&self) -> MapFamily {
        match self {
            RecalMap::Temperature { .. } => MapFamily::Temperature,
            RecalMap::VectorScale { .. } => MapFamily::VectorScale,
            RecalMap::Affine { .. } => MapFamily::Affine,
        }
    }

    /// Rebuild a map from its flattened parameter vector.
    pub fn from_params(family: MapFamily, k: usize, v: &[f64]) -> Result<Self> {
        if v.len() != family.param_count(k) {
            return Err(Error::DimensionMismatch {
                expected: family.param_count(k),
                actual: v.len(),
            });
        }
        Ok(match family {
            MapFamily::Temperature => RecalMap::Temperature { t: v[0].exp() },
            MapFamily::VectorScale => RecalMap::VectorScale {
                w: v[..k].to_vec(),
                b: v[k..].to_vec(),
            },
            MapFamily::Affine => RecalMap::Affine {
                w: v[..k * k].to_vec(),
                b: v[k * k..].to_vec(),
            },
        })
    }

    /// Flattened parameter vector (log-temperature for the temperature family).
    pub fn params(&self) -> Vec<f64> {
        match self {
            RecalMap::Temperature { t } => vec![t.ln()],
            RecalMap::VectorScale { w, b } | RecalMap::Affine { w, b } => {
                w.iter().chain(b).copied().collect()
            }
        }
    }

    fn validate(&self, k: usize) -> Result<()> {
        match self {
            RecalMap::Temperature { t } => {
                if !(*t > 0.0 && t.is_finite()) {
                    return Err(Error::invalid(format!("temperature must be positive, got {t}")));
                }
            }
            RecalMap::VectorScale { w, b } => {
                if w.len() != k || b.len() != k {
                    return Err(Error::DimensionMismatch {
                        expected: k,
                        actual: w.len().max(b.len()),
                    });
                }
            }
            RecalMap::Affine { w, b } => {
                if w.len() != k * k || b.len() != k {
                    return Err(Error::DimensionMismatch {
                        expected: k * k + k,
                        actual: w.len() + b.len(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Logits of the recalibrated prediction for one row of log-features.
    fn logits(&self, x: &[f64], z: &mut [f64]) {
        match self {
            RecalMap::Temperature { t } => {
                for (zj, xj) in z.iter_mut().zip(x) {
                    *zj = xj / t;
                }
            }
            RecalMap::VectorScale { w, b } => {
                for j in 0..x.len() {
                    z[j] = w[j] * x[j] + b[j];
                }
            }
            RecalMap::Affine { w, b } => {
                let k = x.len();
                for j in 0..k {
                    z[j] = b[j] + w[j * k..(j + 1) * k].iter().zip(x).map(|(a, c)| a * c).sum::<f64>();
                }
            }
        }
    }

    /// Recalibrate a whole prediction set.
    pub fn apply_to(&self, data: &PredictionSet) -> Result<PredictionSet> {
        let k = data.num_classes();
        self.validate(k)?;
        let mut out = vec![0.0; data.len() * k];
        let mut x = vec![0.0; k];
        let mut z = vec![0.0; k];
        for (i, q) in out.chunks_exact_mut(k).enumerate() {
            data.log_features(i, &mut x);
            self.logits(&x, &mut z);
            softmax_into(&z, q);
        }
        Ok(data.with_probs(out))
    }
}

/// Recalibrate a single probability vector.
pub fn apply_recal(map: &RecalMap, probs: &[f64]) -> Result<Vec<f64>> {
    check_simplex(probs)?;
    map.validate(probs.len())?;
    let x: Vec<f64> = probs.iter().map(|p| p.max(PROB_FLOOR).ln()).collect();
    let mut z = vec![0.0; probs.len()];
    map.logits(&x, &mut z);
    let mut q = vec![0.0; probs.len()];
    softmax_into(&z, &mut q);
    Ok(q)
}

/// Mean squared distance between the prediction and the one-hot label.
pub fn brier_score(data: &PredictionSet) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let total: f64 = (0..data.len())
        .map(|i| {
            let y = data.label(i);
            data.row(i)
                .iter()
                .enumerate()
                .map(|(j, p)| {
                    let d = if j == y { 1.0 - p } else { *p };
                    d * d
                })
                .sum::<f64>()
        })
        .sum();
    Ok(total / data.len() as f64)
}

/// Mean negative log-likelihood of the true label, probabilities floored at 1e-12.
pub fn softmax_cross_entropy(data: &PredictionSet) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let total: f64 = (0..data.len())
        .map(|i| -data.row(i)[data.label(i)].max(PROB_FLOOR).ln())
        .sum();
    Ok(total / data.len() as f64)
}
