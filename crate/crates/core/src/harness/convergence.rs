use serde::{Deserialize, Serialize};

use crate::ece::{ece_full_k, ece_top_label, optimal_bins_1d, optimal_bins_per_dim_k};
use crate::error::{Error, Result};
use crate::par;
use crate::synthetic::{true_ce_k, true_tce, SyntheticSpec, MIN_ORACLE_SAMPLES};

use super::report::{ExperimentReport, ReportBody};
use super::stats::{fit_loglog_slope, median, SlopeFit};
use super::{cell_error, cell_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinRule {
    /// `⌊n^{1/3}⌋` for binary specs, `⌊n^{1/(K+2)}⌋` per dimension for `K` classes.
    #[default]
    Optimal,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceConfig {
    pub spec: SyntheticSpec,
    pub n_grid: Vec<usize>,
    pub seeds: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub bin_rule: BinRule,
    /// Monte Carlo size of the all-class oracle; unused for binary specs.
    #[serde(default = "default_oracle_samples")]
    pub oracle_samples: usize,
}

fn default_oracle_samples() -> usize {
    1_000_000
}

impl ConvergenceConfig {
    pub fn new(spec: SyntheticSpec, n_grid: Vec<usize>, seeds: usize, master_seed: u64) -> Self {
        Self {
            spec,
            n_grid,
            seeds,
            master_seed,
            bin_rule: BinRule::Optimal,
            oracle_samples: default_oracle_samples(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.n_grid;
        if g.len() < 4 {
            return Err(Error::invalid("n grid needs at least 4 points"));
        }
        if g.windows(2).any(|w| w[0] >= w[1]) || g[0] == 0 {
            return Err(Error::invalid("n grid must be strictly ascending and positive"));
        }
        if (g[g.len() - 1] as f64 / g[0] as f64).log10() < 1.5 {
            return Err(Error::invalid("n grid must span at least 1.5 decades"));
        }
        if self.seeds < 20 {
            return Err(Error::invalid("convergence sweeps need at least 20 seeds"));
        }
        if let BinRule::Fixed(0) = self.bin_rule {
            return Err(Error::invalid("bin count must be positive"));
        }
        if let SyntheticSpec::Multiclass(s) = &self.spec {
            s.validate()?;
            if self.oracle_samples < MIN_ORACLE_SAMPLES {
                return Err(Error::invalid(format!(
                    "oracle needs at least {MIN_ORACLE_SAMPLES} samples"
                )));
            }
        }
        if let SyntheticSpec::Binary(s) = &self.spec {
            s.validate()?;
        }
        Ok(())
    }

    fn bins(&self, n: usize) -> usize {
        match (self.bin_rule, &self.spec) {
            (BinRule::Fixed(b), _) => b,
            (BinRule::Optimal, SyntheticSpec::Binary(_)) => optimal_bins_1d(n),
            (BinRule::Optimal, SyntheticSpec::Multiclass(s)) => optimal_bins_per_dim_k(n, s.k),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceCell {
    pub n: usize,
    pub seed: usize,
    pub bins: usize,
    pub ece: f64,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NSummary {
    pub n: usize,
    pub bins: usize,
    pub median_bias: f64,
    pub q25: f64,
    pub q75: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSummary {
    /// TCE for binary specs, CE_K for multiclass ones.
    pub oracle: f64,
    pub oracle_std_error: f64,
    pub per_n: Vec<NSummary>,
    pub slope: SlopeFit,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Median `|oracle − ECE|` per sample size and the log-log slope of the medians.
pub fn convergence_experiment(cfg: &ConvergenceConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let (oracle, oracle_std_error) = match &cfg.spec {
        SyntheticSpec::Binary(s) => (true_tce(s)?, 0.0),
        SyntheticSpec::Multiclass(s) => {
            let est = true_ce_k(&s.with_stream(cfg.master_seed, 0), cfg.oracle_samples)?;
            (est.value, est.std_error)
        }
    };

    let grid: Vec<(usize, usize)> = cfg
        .n_grid
        .iter()
        .flat_map(|&n| (0..cfg.seeds).map(move |s| (n, s)))
        .collect();
    let cells = par::map(grid.into_iter().enumerate().collect(), |(c, (n, seed))| {
        let rng = cell_rng(cfg.master_seed, c as u64);
        let bins = cfg.bins(n);
        let run = || -> Result<ConvergenceCell> {
            let spec = cfg.spec.with_n(n).with_stream(rng.master_seed(), rng.stream_id());
            let data = spec.generate()?;
            let ece = match &cfg.spec {
                SyntheticSpec::Binary(_) => ece_top_label(&data, bins)?,
                SyntheticSpec::Multiclass(_) => ece_full_k(&data, bins)?,
            };
            Ok(ConvergenceCell {
                n,
                seed,
                bins,
                ece,
                bias: (oracle - ece).abs(),
            })
        };
        run().map_err(|e| cell_error(format!("n={n} seed={seed}"), e))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let per_n: Vec<NSummary> = cfg
        .n_grid
        .iter()
        .map(|&n| {
            let mut b: Vec<f64> = cells.iter().filter(|c| c.n == n).map(|c| c.bias).collect();
            b.sort_by(f64::total_cmp);
            NSummary {
                n,
                bins: cfg.bins(n),
                median_bias: median(&b).expect("seeds >= 20"),
                q25: quantile(&b, 0.25),
                q75: quantile(&b, 0.75),
            }
        })
        .collect();
    let ns: Vec<f64> = per_n.iter().map(|s| s.n as f64).collect();
    let meds: Vec<f64> = per_n.iter().map(|s| s.median_bias).collect();
    let slope = fit_loglog_slope(&ns, &meds)?;

    Ok(ExperimentReport::new(
        ReportBody::Convergence {
            config: cfg.clone(),
            cells,
            summary: ConvergenceSummary {
                oracle,
                oracle_std_error,
                per_n,
                slope,
            },
        },
        vec![],
    ))
}
