//! Synthetic predictors with a known conditional label law.
//!
//! Binary specs draw a top-label confidence `c` on `[1/2, 1]`, predict
//! `[c, 1-c]` and emit label 0 with probability `g(c)`, so
//! `P(Y = C | f_C = c) = g(c)` exactly and the top-label calibration error is
//! a one-dimensional integral. Multiclass specs draw `f` from a Dirichlet,
//! push it through a simplex map `m` and sample the label from `m(f)`, so
//! `E[e_Y | f] = m(f)`.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Beta, Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta as BetaDensity, Continuous};

use crate::error::{Error, Result};
use crate::par;
use crate::prediction::{softmax_into, CompensatedSum, PredictionSet, PROB_FLOOR};
use crate::rng::Rng;

/// Stream reserved for oracle Monte Carlo, disjoint from data streams in practice.
const ORACLE_STREAM: u64 = 0x0AC1_E000_0000_0001;
const ORACLE_SHARD: usize = 1 << 16;

/// Binary confidences live on this interval.
pub const BINARY_SUPPORT: (f64, f64) = (0.5, 1.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum ConfidenceLaw {
    Uniform { lo: f64, hi: f64 },
    /// `Beta(a, b)` rescaled onto `[lo, hi]`; `a, b >= 1` keeps the density bounded.
    Beta { a: f64, b: f64, lo: f64, hi: f64 },
}

impl ConfidenceLaw {
    pub fn support(&self) -> (f64, f64) {
        match *self {
            ConfidenceLaw::Uniform { lo, hi } | ConfidenceLaw::Beta { lo, hi, .. } => (lo, hi),
        }
    }

    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.support();
        if !(BINARY_SUPPORT.0 <= lo && lo < hi && hi <= BINARY_SUPPORT.1) {
            return Err(Error::invalid(format!(
                "confidence support [{lo}, {hi}] must be a nonempty subset of [1/2, 1]"
            )));
        }
        if let ConfidenceLaw::Beta { a, b, .. } = *self {
            if !(a >= 1.0 && b >= 1.0 && a.is_finite() && b.is_finite()) {
                return Err(Error::invalid("beta shape parameters must be finite and >= 1"));
            }
        }
        Ok(())
    }

    pub fn pdf(&self, c: f64) -> f64 {
        let (lo, hi) = self.support();
        if c < lo || c > hi {
            return 0.0;
        }
        let w = hi - lo;
        match *self {
            ConfidenceLaw::Uniform { .. } => 1.0 / w,
            ConfidenceLaw::Beta { a, b, .. } => {
                let d = BetaDensity::new(a, b).expect("validated shape");
                d.pdf(((c - lo) / w).clamp(0.0, 1.0)) / w
            }
        }
    }

    fn sampler(&self) -> Sampler {
        match *self {
            ConfidenceLaw::Uniform { lo, hi } => Sampler::Uniform { lo, hi },
            ConfidenceLaw::Beta { a, b, lo, hi } => Sampler::Beta {
                dist: Beta::new(a, b).expect("validated shape"),
                lo,
                hi,
            },
        }
    }
}

enum Sampler {
    Uniform { lo: f64, hi: f64 },
    Beta { dist: Beta<f64>, lo: f64, hi: f64 },
}

impl Sampler {
    fn draw(&self, rng: &mut Rng) -> f64 {
        match self {
            Sampler::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            Sampler::Beta { dist, lo, hi } => lo + (hi - lo) * dist.sample(rng),
        }
    }
}

/// Conditional hit probability `g(c) = P(Y = C | f_C = c)`, clipped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MiscalibrationMap1D {
    Identity,
    /// `g(c) = c + a`
    Shift { a: f64 },
    /// `g(c) = c + a sin(2 pi b c)`
    Sine { amplitude: f64, frequency: f64 },
    /// `g(c) = c^gamma`
    Power { gamma: f64 },
}

impl MiscalibrationMap1D {
    pub fn eval(&self, c: f64) -> f64 {
        let raw = match *self {
            MiscalibrationMap1D::Identity => c,
            MiscalibrationMap1D::Shift { a } => c + a,
            MiscalibrationMap1D::Sine {
                amplitude,
                frequency,
            } => c + amplitude * (2.0 * PI * frequency * c).sin(),
            MiscalibrationMap1D::Power { gamma } => c.powf(gamma),
        };
        raw.clamp(0.0, 1.0)
    }

    /// Lipschitz constant of `g` on the binary confidence domain `[1/2, 1]`.
    pub fn lipschitz(&self) -> f64 {
        match *self {
            MiscalibrationMap1D::Identity | MiscalibrationMap1D::Shift { .. } => 1.0,
            MiscalibrationMap1D::Sine {
                amplitude,
                frequency,
            } => 1.0 + 2.0 * PI * (amplitude * frequency).abs(),
            MiscalibrationMap1D::Power { gamma } if gamma >= 1.0 => gamma,
            MiscalibrationMap1D::Power { gamma } => gamma * 0.5f64.powf(gamma - 1.0),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            MiscalibrationMap1D::Identity => true,
            MiscalibrationMap1D::Shift { a } => a.is_finite(),
            MiscalibrationMap1D::Sine {
                amplitude,
                frequency,
            } => amplitude.is_finite() && frequency.is_finite(),
            MiscalibrationMap1D::Power { gamma } => gamma.is_finite() && gamma > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid miscalibration map {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec1D {
    pub confidence: ConfidenceLaw,
    pub map: MiscalibrationMap1D,
    pub n: usize,
    pub seed: u64,
    #[serde(default)]
    pub stream: u64,
}

impl SyntheticSpec1D {
    pub fn rng(&self) -> Rng {
        Rng::new(self.seed, self.stream)
    }

    pub fn validate(&self) -> Result<()> {
        self.confidence.validate()?;
        self.map.validate()
    }

    /// Declared Lipschitz constant of the conditional hit probability.
    pub fn lipschitz(&self) -> f64 {
        self.map.lipschitz()
    }

    pub fn with_n(&self, n: usize) -> Self {
        Self { n, ..self.clone() }
    }

    pub fn with_stream(&self, seed: u64, stream: u64) -> Self {
        Self {
            seed,
            stream,
            ..self.clone()
        }
    }
}

/// Simplex-to-simplex map giving `E[e_Y | f]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MulticlassMap {
    Identity,
    /// `q = softmax(ln f / T)`; `T > 1` means the predictor is overconfident.
    TemperatureDistort { temperature: f64 },
    /// `q = (1 - beta) f + beta / K`
    MixtureUniform { beta: f64 },
}

impl MulticlassMap {
    pub fn apply(&self, f: &[f64], out: &mut [f64]) {
        match *self {
            MulticlassMap::Identity => out.copy_from_slice(f),
            MulticlassMap::TemperatureDistort { temperature } => {
                for (o, p) in out.iter_mut().zip(f) {
                    *o = p.max(PROB_FLOOR).ln() / temperature;
                }
                let z = out.to_vec();
                softmax_into(&z, out);
            }
            MulticlassMap::MixtureUniform { beta } => {
                let u = 1.0 / f.len() as f64;
                for (o, p) in out.iter_mut().zip(f) {
                    *o = (1.0 - beta) * p + beta * u;
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            MulticlassMap::Identity => true,
            MulticlassMap::TemperatureDistort { temperature } => {
                temperature.is_finite() && temperature > 0.0
            }
            MulticlassMap::MixtureUniform { beta } => (0.0..=1.0).contains(&beta),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid multiclass map {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpecK {
    pub k: usize,
    pub concentration: Vec<f64>,
    pub map: MulticlassMap,
    pub n: usize,
    pub seed: u64,
    #[serde(default)]
    pub stream: u64,
}

impl SyntheticSpecK {
    /// Symmetric Dirichlet(`alpha`, ..., `alpha`) predictions.
    pub fn symmetric(k: usize, alpha: f64, map: MulticlassMap, n: usize, seed: u64) -> Self {
        Self {
            k,
            concentration: vec![alpha; k],
            map,
            n,
            seed,
            stream: 0,
        }
    }

    pub fn rng(&self) -> Rng {
        Rng::new(self.seed, self.stream)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::invalid("multiclass spec needs k >= 2"));
        }
        if self.concentration.len() != self.k {
            return Err(Error::DimensionMismatch {
                expected: self.k,
                actual: self.concentration.len(),
            });
        }
        if self.concentration.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(Error::invalid("Dirichlet concentrations must be positive"));
        }
        self.map.validate()
    }

    pub fn with_n(&self, n: usize) -> Self {
        Self {
            n,
            ..self.clone()
        }
    }

    pub fn with_stream(&self, seed: u64, stream: u64) -> Self {
        Self {
            seed,
            stream,
            ..self.clone()
        }
    }
}

/// Either kind of synthetic spec, as stored in JSON configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticSpec {
    Binary(SyntheticSpec1D),
    Multiclass(SyntheticSpecK),
}

impl SyntheticSpec {
    pub fn generate(&self) -> Result<PredictionSet> {
        match self {
            SyntheticSpec::Binary(s) => gen_binary(s),
            SyntheticSpec::Multiclass(s) => gen_multiclass(s),
        }
    }

    pub fn n(&self) -> usize {
        match self {
            SyntheticSpec::Binary(s) => s.n,
            SyntheticSpec::Multiclass(s) => s.n,
        }
    }

    pub fn with_n(&self, n: usize) -> Self {
        match self {
            SyntheticSpec::Binary(s) => SyntheticSpec::Binary(s.with_n(n)),
            SyntheticSpec::Multiclass(s) => SyntheticSpec::Multiclass(s.with_n(n)),
        }
    }

    pub fn with_stream(&self, seed: u64, stream: u64) -> Self {
        match self {
            SyntheticSpec::Binary(s) => SyntheticSpec::Binary(s.with_stream(seed, stream)),
            SyntheticSpec::Multiclass(s) => SyntheticSpec::Multiclass(s.with_stream(seed, stream)),
        }
    }
}

pub fn gen_binary(spec: &SyntheticSpec1D) -> Result<PredictionSet> {
    spec.validate()?;
    let mut rng = spec.rng();
    let sampler = spec.confidence.sampler();
    let mut probs = Vec::with_capacity(2 * spec.n);
    let mut labels = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let c = sampler.draw(&mut rng);
        let hit = rng.random::<f64>() < spec.map.eval(c);
        probs.extend([c, 1.0 - c]);
        labels.push(if hit { 0 } else { 1 });
    }
    PredictionSet::from_flat(2, probs, labels)
}

pub fn gen_multiclass(spec: &SyntheticSpecK) -> Result<PredictionSet> {
    spec.validate()?;
    let mut rng = spec.rng();
    let dirichlet = DirichletSampler::new(&spec.concentration);
    let k = spec.k;
    let mut probs = vec![0.0; spec.n * k];
    let mut labels = Vec::with_capacity(spec.n);
    let mut q = vec![0.0; k];
    for row in probs.chunks_exact_mut(k) {
        dirichlet.draw(&mut rng, row);
        spec.map.apply(row, &mut q);
        labels.push(categorical(&q, rng.random::<f64>()));
    }
    PredictionSet::from_flat(k, probs, labels)
}

struct DirichletSampler {
    gammas: Vec<Gamma<f64>>,
}

impl DirichletSampler {
    fn new(concentration: &[f64]) -> Self {
        Self {
            gammas: concentration
                .iter()
                .map(|&a| Gamma::new(a, 1.0).expect("validated concentration"))
                .collect(),
        }
    }

    fn draw(&self, rng: &mut Rng, out: &mut [f64]) {
        loop {
            for (o, g) in out.iter_mut().zip(&self.gammas) {
                *o = g.sample(rng);
            }
            let s: f64 = out.iter().sum();
            if s > 0.0 && s.is_finite() {
                out.iter_mut().for_each(|x| *x /= s);
                return;
            }
        }
    }
}

fn categorical(q: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (j, &p) in q.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    q.len() - 1
}

/// Successive composite-Simpson estimates must agree to this.
pub const QUADRATURE_TOL: f64 = 1e-8;
const MAX_PANELS: usize = 1 << 22;

/// Exact top-label calibration error `E|g(c) - c|` of a binary spec.
pub fn true_tce(spec: &SyntheticSpec1D) -> Result<f64> {
    spec.validate()?;
    let (lo, hi) = spec.confidence.support();
    simpson(
        |c| (spec.map.eval(c) - c).abs() * spec.confidence.pdf(c),
        lo,
        hi,
        QUADRATURE_TOL,
    )
}

/// Composite Simpson with panel doubling until successive estimates differ by less than `tol`.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    let mut panels = 16usize;
    let mut prev = simpson_fixed(&f, a, b, panels);
    loop {
        panels *= 2;
        let next = simpson_fixed(&f, a, b, panels);
        let change = (next - prev).abs();
        if change < tol {
            return Ok(next);
        }
        if panels >= MAX_PANELS {
            return Err(Error::Quadrature {
                panels,
                last_change: change,
            });
        }
        prev = next;
    }
}

fn simpson_fixed(f: &impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / panels as f64;
    let mut s = CompensatedSum::default();
    s.add(f(a));
    s.add(f(b));
    for i in 1..panels {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s.add(w * f(a + i as f64 * h));
    }
    s.value() * h / 3.0
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// Smallest sample count accepted by [`true_ce_k`].
pub const MIN_ORACLE_SAMPLES: usize = 100_000;

/// Monte Carlo estimate of `CE_K = E||m(f) - f||_1` on a dedicated stream.
///
/// The value depends only on the spec's seed and `oracle_samples`, never on
/// the data stream, and is identical with or without the `parallel` feature.
pub fn true_ce_k(spec: &SyntheticSpecK, oracle_samples: usize) -> Result<OracleEstimate> {
    spec.validate()?;
    if oracle_samples < MIN_ORACLE_SAMPLES {
        return Err(Error::invalid(format!(
            "oracle needs at least {MIN_ORACLE_SAMPLES} samples, got {oracle_samples}"
        )));
    }
    if spec.map == MulticlassMap::Identity {
        return Ok(OracleEstimate {
            value: 0.0,
            std_error: 0.0,
        });
    }
    let base = Rng::new(spec.seed, ORACLE_STREAM);
    let shards: Vec<(u64, usize)> = (0..oracle_samples.div_ceil(ORACLE_SHARD))
        .map(|s| {
            let len = ORACLE_SHARD.min(oracle_samples - s * ORACLE_SHARD);
            (s as u64, len)
        })
        .collect();
    let sums = par::map(shards, |(shard, len)| {
        let mut rng = base.child(shard);
        let dirichlet = DirichletSampler::new(&spec.concentration);
        let mut f = vec![0.0; spec.k];
        let mut q = vec![0.0; spec.k];
        let mut s1 = CompensatedSum::default();
        let mut s2 = CompensatedSum::default();
        for _ in 0..len {
            dirichlet.draw(&mut rng, &mut f);
            spec.map.apply(&f, &mut q);
            let d: f64 = q.iter().zip(&f).map(|(a, b)| (a - b).abs()).sum();
            s1.add(d);
            s2.add(d * d);
        }
        (s1, s2)
    });
    let (mut s1, mut s2) = (CompensatedSum::default(), CompensatedSum::default());
    for (a, b) in sums {
        s1.merge(a);
        s2.merge(b);
    }
    let n = oracle_samples as f64;
    let mean = s1.value() / n;
    let var = ((s2.value() / n - mean * mean) * n / (n - 1.0)).max(0.0);
    Ok(OracleEstimate {
        value: mean,
        std_error: (var / n).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn uniform_spec(map: MiscalibrationMap1D, lo: f64, hi: f64, n: usize) -> SyntheticSpec1D {
        SyntheticSpec1D {
            confidence: ConfidenceLaw::Uniform { lo, hi },
            map,
            n,
            seed: 11,
            stream: 0,
        }
    }

    #[test]
    fn tce_identity_is_zero() {
        let s = uniform_spec(MiscalibrationMap1D::Identity, 0.5, 1.0, 10);
        assert_eq!(true_tce(&s).unwrap(), 0.0);
    }

    #[test]
    fn tce_constant_shift() {
        let s = uniform_spec(MiscalibrationMap1D::Shift { a: -0.1 }, 0.6, 0.9, 10);
        assert_abs_diff_eq!(true_tce(&s).unwrap(), 0.1, epsilon = 1e-12);
    }

    #[test]
    fn tce_beta_law_integrates_to_weighted_gap() {
        // A constant gap times a normalized density integrates to the gap.
        let s = SyntheticSpec1D {
            confidence: ConfidenceLaw::Beta {
                a: 2.0,
                b: 3.0,
                lo: 0.55,
                hi: 0.95,
            },
            map: MiscalibrationMap1D::Shift { a: 0.03 },
            n: 10,
            seed: 1,
            stream: 0,
        };
        assert_abs_diff_eq!(true_tce(&s).unwrap(), 0.03, epsilon = 1e-9);
    }

    #[test]
    fn simpson_polynomial_and_failure() {
        let v = simpson(|x| x * x * x - x, 0.0, 2.0, 1e-12).unwrap();
        assert_abs_diff_eq!(v, 2.0, epsilon = 1e-12);
        let err = simpson(|x| if x > 0.3 { 1.0 } else { 0.0 }, 0.0, 1.0, 1e-300);
        assert!(matches!(err, Err(Error::Quadrature { .. })));
    }

    #[test]
    fn binary_generation_is_reproducible_and_on_support() {
        let s = uniform_spec(MiscalibrationMap1D::Sine { amplitude: 0.05, frequency: 2.0 }, 0.55, 0.95, 500);
        let a = gen_binary(&s).unwrap();
        let b = gen_binary(&s).unwrap();
        assert_eq!(a, b);
        for i in 0..a.len() {
            let t = a.top(i);
            assert_eq!(t.top_label, 0);
            assert!((0.55..=0.95).contains(&t.confidence));
        }
        let c = gen_binary(&s.with_stream(11, 1)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn shift_map_hit_rate() {
        let s = uniform_spec(MiscalibrationMap1D::Shift { a: -0.1 }, 0.6, 0.9, 1_000_000);
        let data = gen_binary(&s).unwrap();
        let mut gap = 0.0;
        for i in 0..data.len() {
            let hit = if data.label(i) == 0 { 1.0 } else { 0.0 };
            gap += hit - data.row(i)[0];
        }
        gap /= data.len() as f64;
        // sd of the mean residual is about 0.45 / 1000
        assert!((gap + 0.1).abs() < 2e-3, "mean residual {gap}");
    }

    #[test]
    fn identity_hit_rate_tracks_confidence_per_bin() {
        let s = uniform_spec(MiscalibrationMap1D::Identity, 0.5, 1.0, 200_000);
        let data = gen_binary(&s).unwrap();
        let stats = crate::ece::bin_stats_1d(&data, 20).unwrap();
        for st in stats.iter().filter(|s| s.count >= 500) {
            let p = st.mean_confidence.unwrap();
            let band = 4.0 * (p * (1.0 - p) / st.count as f64).sqrt();
            assert!((st.mean_hit.unwrap() - p).abs() < band, "{st:?}");
        }
    }

    #[test]
    fn rejects_bad_specs() {
        let s = uniform_spec(MiscalibrationMap1D::Identity, 0.3, 0.9, 10);
        assert!(gen_binary(&s).is_err());
        let s = uniform_spec(MiscalibrationMap1D::Power { gamma: -1.0 }, 0.6, 0.9, 10);
        assert!(gen_binary(&s).is_err());
        let k = SyntheticSpecK::symmetric(3, 0.0, MulticlassMap::Identity, 10, 0);
        assert!(gen_multiclass(&k).is_err());
        let k = SyntheticSpecK::symmetric(3, 1.0, MulticlassMap::MixtureUniform { beta: 1.5 }, 10, 0);
        assert!(gen_multiclass(&k).is_err());
    }

    #[test]
    fn declared_lipschitz_holds_on_grid() {
        let maps = [
            MiscalibrationMap1D::Identity,
            MiscalibrationMap1D::Shift { a: 0.2 },
            MiscalibrationMap1D::Sine { amplitude: 0.05, frequency: 3.0 },
            MiscalibrationMap1D::Sine { amplitude: -0.2, frequency: 0.5 },
            MiscalibrationMap1D::Power { gamma: 2.5 },
            MiscalibrationMap1D::Power { gamma: 0.4 },
        ];
        let grid = 10_000;
        for m in maps {
            let l = m.lipschitz();
            let xs: Vec<f64> = (0..=grid).map(|i| 0.5 + 0.5 * i as f64 / grid as f64).collect();
            for w in xs.windows(2) {
                let slope = (m.eval(w[1]) - m.eval(w[0])).abs() / (w[1] - w[0]);
                assert!(slope <= l + 1e-6, "{m:?}: slope {slope} > {l}");
            }
        }
    }

    #[test]
    fn multiclass_generation() {
        let s = SyntheticSpecK::symmetric(4, 1.0, MulticlassMap::TemperatureDistort { temperature: 2.0 }, 300, 5);
        let a = gen_multiclass(&s).unwrap();
        assert_eq!(a.len(), 300);
        assert_eq!(a.num_classes(), 4);
        assert_eq!(a, gen_multiclass(&s).unwrap());
    }

    #[test]
    fn temperature_distort_flattens() {
        let m = MulticlassMap::TemperatureDistort { temperature: 2.0 };
        let mut q = [0.0; 2];
        m.apply(&[0.8, 0.2], &mut q);
        let z = 0.8f64.sqrt() + 0.2f64.sqrt();
        assert_abs_diff_eq!(q[0], 0.8f64.sqrt() / z, epsilon = 1e-15);
    }

    #[test]
    fn ce_k_oracle() {
        let id = SyntheticSpecK::symmetric(3, 1.0, MulticlassMap::Identity, 0, 3);
        let o = true_ce_k(&id, MIN_ORACLE_SAMPLES).unwrap();
        assert_eq!((o.value, o.std_error), (0.0, 0.0));
        assert!(true_ce_k(&id, 10).is_err());

        // K=2, f1 ~ U(0,1): E||q - f||_1 = beta * E[2|f1 - 1/2|] = beta / 2.
        let mix = SyntheticSpecK::symmetric(2, 1.0, MulticlassMap::MixtureUniform { beta: 0.2 }, 0, 3);
        let o = true_ce_k(&mix, 1_000_000).unwrap();
        assert!((o.value - 0.1).abs() < 3.0 * o.std_error, "{o:?}");
        assert!(o.std_error < 1e-4);

        let other = true_ce_k(&SyntheticSpecK { seed: 4, ..mix.clone() }, 1_000_000).unwrap();
        assert!((o.value - other.value).abs() < 5e-4);
    }
}
