//! PAC-Bayes recalibration.
//!
//! Minimizes, over a mean-field Gaussian posterior `N(mu, diag sigma^2)` on the
//! map parameters,
//!
//! ```text
//! E_v[ Brier(v) (+ NLL(v)) ] + alpha * KL(posterior || prior) / n
//! ```
//!
//! with reparameterized Monte Carlo gradients `v = mu + sigma * xi`, then sets
//! the point map to the mean of `j_final` posterior samples.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bounds::kl_gaussian_diag;
use crate::error::{Error, Result};
use crate::prediction::{softmax_into, PredictionSet};
use crate::rng::Rng;

use super::{MapFamily, RecalMap};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPosterior {
    pub mu: Vec<f64>,
    pub log_sigma: Vec<f64>,
}

impl GaussianPosterior {
    pub fn new(mu: Vec<f64>, log_sigma: Vec<f64>) -> Result<Self> {
        if mu.len() != log_sigma.len() {
            return Err(Error::DimensionMismatch {
                expected: mu.len(),
                actual: log_sigma.len(),
            });
        }
        Ok(Self { mu, log_sigma })
    }

    /// Centered on the identity map with a shared standard deviation.
    pub fn identity(family: MapFamily, k: usize, sigma: f64) -> Self {
        let mu = family.identity_params(k);
        let log_sigma = vec![sigma.ln(); mu.len()];
        Self { mu, log_sigma }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn variance(&self) -> Vec<f64> {
        self.log_sigma.iter().map(|s| (2.0 * s).exp()).collect()
    }

    pub fn kl_to(&self, prior: &GaussianPosterior) -> Result<f64> {
        kl_gaussian_diag(&self.mu, &self.variance(), &prior.mu, &prior.variance())
    }

    fn draw(&self, rng: &mut Rng, xi: &mut [f64], v: &mut [f64]) {
        for d in 0..self.dim() {
            xi[d] = StandardNormal.sample(rng);
            v[d] = self.mu[d] + self.log_sigma[d].exp() * xi[d];
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PbrObjective {
    /// Expected Brier score plus the KL penalty.
    BrierOnly,
    /// Expected cross-entropy plus Brier score plus the KL penalty.
    BrierPlusLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PbrConfig {
    pub family: MapFamily,
    pub alpha: f64,
    /// Posterior samples per gradient step.
    pub j_train: usize,
    /// Posterior samples averaged into the returned point map.
    pub j_final: usize,
    pub step_size: f64,
    /// Step size is multiplied by this after every iteration.
    pub decay: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub objective: PbrObjective,
    /// Defaults to the identity map with unit variance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<GaussianPosterior>,
    /// Starting posterior standard deviation; the posterior otherwise starts at the prior.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_sigma: Option<f64>,
    /// Stop once the mean objective over this many steps improves by less than `tol` on the window before.
    pub patience: usize,
    pub tol: f64,
}

impl Default for PbrConfig {
    fn default() -> Self {
        Self {
            family: MapFamily::Temperature,
            alpha: 0.1,
            j_train: 8,
            j_final: 100,
            step_size: 0.05,
            decay: 0.995,
            max_iters: 600,
            seed: 0,
            objective: PbrObjective::BrierOnly,
            prior: None,
            init_sigma: None,
            patience: 50,
            tol: 1e-8,
        }
    }
}

impl PbrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.j_train == 0 || self.j_final == 0 {
            return Err(Error::invalid("posterior sample counts must be at least 1"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::invalid("step size must be positive"));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::invalid("decay must lie in (0, 1]"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid("alpha must be nonnegative"));
        }
        Ok(())
    }

    pub fn prior_for(&self, k: usize) -> GaussianPosterior {
        self.prior
            .clone()
            .unwrap_or_else(|| GaussianPosterior::identity(self.family, k, 1.0))
    }
}

/// Gradient of the PBR objective with respect to `(mu, log_sigma)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PbrGradient {
    pub objective: f64,
    pub d_mu: Vec<f64>,
    pub d_log_sigma: Vec<f64>,
}

/// Features and labels of the recalibration set, laid out for repeated evaluation.
struct Problem {
    family: MapFamily,
    objective: PbrObjective,
    k: usize,
    x: Vec<f64>,
    labels: Vec<usize>,
}

impl Problem {
    fn new(data: &PredictionSet, family: MapFamily, objective: PbrObjective) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let k = data.num_classes();
        let mut x = vec![0.0; data.len() * k];
        for (i, row) in x.chunks_exact_mut(k).enumerate() {
            data.log_features(i, row);
        }
        Ok(Self {
            family,
            objective,
            k,
            x,
            labels: data.labels().to_vec(),
        })
    }

    fn n(&self) -> usize {
        self.labels.len()
    }

    /// Mean data loss at parameters `v`; accumulates its gradient into `grad` when given.
    fn loss(&self, v: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let k = self.k;
        let mut z = vec![0.0; k];
        let mut q = vec![0.0; k];
        let mut dz = vec![0.0; k];
        let inv_n = 1.0 / self.n() as f64;
        let inv_t = if self.family == MapFamily::Temperature {
            (-v[0]).exp()
        } else {
            0.0
        };
        let mut total = 0.0;
        for (x, &y) in self.x.chunks_exact(k).zip(&self.labels) {
            match self.family {
                MapFamily::Temperature => {
                    for j in 0..k {
                        z[j] = x[j] * inv_t;
                    }
                }
                MapFamily::VectorScale => {
                    for j in 0..k {
                        z[j] = v[j] * x[j] + v[k + j];
                    }
                }
                MapFamily::Affine => {
                    for j in 0..k {
                        let w = &v[j * k..(j + 1) * k];
                        z[j] = v[k * k + j] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
            softmax_into(&z, &mut q);

            // Brier: sum_j (q_j - e_j)^2, with d/dz_j = q_j (g_j - q.g), g = 2(q - e).
            let mut brier = 0.0;
            let mut qg = 0.0;
            for (j, &qj) in q.iter().enumerate() {
                let d = qj - if j == y { 1.0 } else { 0.0 };
                brier += d * d;
                qg += qj * 2.0 * d;
            }
            let mut loss = brier;
            if grad.is_some() {
                for j in 0..k {
                    let d = q[j] - if j == y { 1.0 } else { 0.0 };
                    dz[j] = q[j] * (2.0 * d - qg);
                }
            }
            if self.objective == PbrObjective::BrierPlusLoss {
                // Cross-entropy through log-softmax; d/dz = q - e.
                let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + z.iter().map(|zj| (zj - m).exp()).sum::<f64>().ln();
                loss += lse - z[y];
                if grad.is_some() {
                    for j in 0..k {
                        dz[j] += q[j] - if j == y { 1.0 } else { 0.0 };
                    }
                }
            }
            total += loss;

            if let Some(g) = grad.as_deref_mut() {
                match self.family {
                    MapFamily::Temperature => {
                        // z = x e^{-s}, dz/ds = -z
                        g[0] -= inv_n * (0..k).map(|j| dz[j] * z[j]).sum::<f64>();
                    }
                    MapFamily::VectorScale => {
                        for j in 0..k {
                            g[j] += inv_n * dz[j] * x[j];
                            g[k + j] += inv_n * dz[j];
                        }
                    }
                    MapFamily::Affine => {
                        for j in 0..k {
                            let row = &mut g[j * k..(j + 1) * k];
                            for (gm, xm) in row.iter_mut().zip(x) {
                                *gm += inv_n * dz[j] * xm;
                            }
                            g[k * k + j] += inv_n * dz[j];
                        }
                    }
                }
            }
        }
        total * inv_n
    }
}

fn check_dims(posterior: &GaussianPosterior, prior: &GaussianPosterior, family: MapFamily, k: usize) -> Result<()> {
    let d = family.param_count(k);
    for len in [posterior.mu.len(), posterior.log_sigma.len(), prior.mu.len(), prior.log_sigma.len()] {
        if len != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: len,
            });
        }
    }
    Ok(())
}

/// Monte Carlo estimate of the PBR objective with `cfg.j_train` posterior draws from `rng`.
pub fn pbr_objective(
    posterior: &GaussianPosterior,
    prior: &GaussianPosterior,
    data: &PredictionSet,
    cfg: &PbrConfig,
    rng: &mut Rng,
) -> Result<f64> {
    cfg.validate()?;
    check_dims(posterior, prior, cfg.family, data.num_classes())?;
    let problem = Problem::new(data, cfg.family, cfg.objective)?;
    objective_with(&problem, posterior, prior, cfg, rng)
}

fn objective_with(
    problem: &Problem,
    posterior: &GaussianPosterior,
    prior: &GaussianPosterior,
    cfg: &PbrConfig,
    rng: &mut Rng,
) -> Result<f64> {
    let d = posterior.dim();
    let (mut xi, mut v) = (vec![0.0; d], vec![0.0; d]);
    let mut data_term = 0.0;
    for _ in 0..cfg.j_train {
        posterior.draw(rng, &mut xi, &mut v);
        data_term += problem.loss(&v, None);
    }
    data_term /= cfg.j_train as f64;
    Ok(data_term + cfg.alpha * posterior.kl_to(prior)? / problem.n() as f64)
}

/// Reparameterized gradient of the PBR objective.
///
/// Draws exactly the same posterior samples as [`pbr_objective`] for an equal
/// `rng` state, so the two agree and finite differences of the objective
/// under a fixed stream match this gradient.
pub fn pbr_gradient(
    posterior: &GaussianPosterior,
    prior: &GaussianPosterior,
    data: &PredictionSet,
    cfg: &PbrConfig,
    rng: &mut Rng,
) -> Result<PbrGradient> {
    cfg.validate()?;
    check_dims(posterior, prior, cfg.family, data.num_classes())?;
    let problem = Problem::new(data, cfg.family, cfg.objective)?;
    gradient_with(&problem, posterior, prior, cfg, rng)
}

fn gradient_with(
    problem: &Problem,
    posterior: &GaussianPosterior,
    prior: &GaussianPosterior,
    cfg: &PbrConfig,
    rng: &mut Rng,
) -> Result<PbrGradient> {
    let d = posterior.dim();
    let (mut xi, mut v) = (vec![0.0; d], vec![0.0; d]);
    let mut g = vec![0.0; d];
    let mut d_mu = vec![0.0; d];
    let mut d_log_sigma = vec![0.0; d];
    let sigma: Vec<f64> = posterior.log_sigma.iter().map(|s| s.exp()).collect();
    let mut data_term = 0.0;
    for _ in 0..cfg.j_train {
        posterior.draw(rng, &mut xi, &mut v);
        g.iter_mut().for_each(|x| *x = 0.0);
        data_term += problem.loss(&v, Some(&mut g));
        for i in 0..d {
            d_mu[i] += g[i];
            d_log_sigma[i] += g[i] * sigma[i] * xi[i];
        }
    }
    let inv_j = 1.0 / cfg.j_train as f64;
    let weight = cfg.alpha / problem.n() as f64;
    for i in 0..d {
        let prior_var = (2.0 * prior.log_sigma[i]).exp();
        d_mu[i] = d_mu[i] * inv_j + weight * (posterior.mu[i] - prior.mu[i]) / prior_var;
        d_log_sigma[i] = d_log_sigma[i] * inv_j + weight * (sigma[i] * sigma[i] / prior_var - 1.0);
    }
    Ok(PbrGradient {
        objective: data_term * inv_j + weight * posterior.kl_to(prior)?,
        d_mu,
        d_log_sigma,
    })
}

/// The mean objective of the last `window` steps improved on the window
/// before it by less than `tol`. Window means smooth out the Monte Carlo noise
/// of single-step estimates.
fn stalled(history: &[f64], window: usize, tol: f64) -> bool {
    let n = history.len();
    if window == 0 || n < 2 * window {
        return false;
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    mean(&history[n - 2 * window..n - window]) - mean(&history[n - window..]) < tol
}

/// Output of [`train_pbr`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PbrFit {
    pub family: MapFamily,
    /// Point parameters: the mean of `j_final` posterior samples.
    pub parameters: Vec<f64>,
    pub map: RecalMap,
    pub posterior: GaussianPosterior,
    pub prior: GaussianPosterior,
    pub kl: f64,
    pub final_objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub config: PbrConfig,
}

/// Fit the PBR posterior on a recalibration set with Adam and a geometrically
/// decaying step size, then average `j_final` posterior samples into the point map.
///
/// Deterministic given `(data, cfg)`.
pub fn train_pbr(data: &PredictionSet, cfg: &PbrConfig) -> Result<PbrFit> {
    cfg.validate()?;
    let k = data.num_classes();
    let prior = cfg.prior_for(k);
    let mut posterior = prior.clone();
    if let Some(s) = cfg.init_sigma {
        posterior.log_sigma.iter_mut().for_each(|l| *l = s.ln());
    }
    check_dims(&posterior, &prior, cfg.family, k)?;
    let problem = Problem::new(data, cfg.family, cfg.objective)?;
    let d = posterior.dim();

    let mut rng = Rng::new(cfg.seed, 0);
    let mut m = vec![0.0; 2 * d];
    let mut s = vec![0.0; 2 * d];
    let mut lr = cfg.step_size;
    let mut history = Vec::with_capacity(cfg.max_iters);
    let mut iterations = 0usize;
    let mut converged = false;

    for it in 1..=cfg.max_iters {
        iterations = it;
        let grad = gradient_with(&problem, &posterior, &prior, cfg, &mut rng)?;
        if !grad.objective.is_finite() || grad.d_mu.iter().chain(&grad.d_log_sigma).any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                iteration: it,
                detail: format!(
                    "objective {} at mu {:?}, log_sigma {:?}",
                    grad.objective, posterior.mu, posterior.log_sigma
                ),
            });
        }
        history.push(grad.objective);
        if stalled(&history, cfg.patience, cfg.tol) {
            converged = true;
            break;
        }

        let b1 = 1.0 - ADAM_BETA1.powi(it as i32);
        let b2 = 1.0 - ADAM_BETA2.powi(it as i32);
        for (i, g) in grad.d_mu.iter().chain(&grad.d_log_sigma).enumerate() {
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
            s[i] = ADAM_BETA2 * s[i] + (1.0 - ADAM_BETA2) * g * g;
            let step = lr * (m[i] / b1) / ((s[i] / b2).sqrt() + ADAM_EPS);
            if i < d {
                posterior.mu[i] -= step;
            } else {
                posterior.log_sigma[i - d] -= step;
            }
        }
        lr *= cfg.decay;
    }

    let mut final_rng = Rng::new(cfg.seed, 1);
    let mut parameters = vec![0.0; d];
    let (mut xi, mut v) = (vec![0.0; d], vec![0.0; d]);
    for _ in 0..cfg.j_final {
        posterior.draw(&mut final_rng, &mut xi, &mut v);
        for (p, x) in parameters.iter_mut().zip(&v) {
            *p += x / cfg.j_final as f64;
        }
    }
    let map = RecalMap::from_params(cfg.family, k, &parameters)?;
    let mut eval_rng = Rng::new(cfg.seed, 2);
    let eval_cfg = PbrConfig {
        j_train: cfg.j_final,
        ..cfg.clone()
    };
    let final_objective = objective_with(&problem, &posterior, &prior, &eval_cfg, &mut eval_rng)?;
    if !final_objective.is_finite() {
        return Err(Error::NonFinite {
            iteration: iterations,
            detail: "final objective".into(),
        });
    }
    Ok(PbrFit {
        family: cfg.family,
        parameters,
        map,
        kl: posterior.kl_to(&prior)?,
        posterior,
        prior,
        final_objective,
        iterations,
        converged,
        config: cfg.clone(),
    })
}
