use serde::{Deserialize, Serialize};

use crate::ece::{ece_gap, ece_top_label, optimal_bins_1d};
use crate::error::{Error, Result};
use crate::par;
use crate::prediction::PredictionSet;
use crate::recal::{train_pbr, PbrConfig};
use crate::rng::mix;

use super::report::{ExperimentReport, ReportBody};
use super::stats::{kendall_tau, median, pearson};
use super::{cell_error, cell_rng, shuffled_indices, DataSource, ALPHA_GRID};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlGapConfig {
    pub source: DataSource,
    pub alpha_grid: Vec<f64>,
    pub replicates: usize,
    pub n_re: usize,
    pub n_te: usize,
    pub master_seed: u64,
    /// Defaults to `⌊n_re^{1/3}⌋`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
    pub pbr: PbrConfig,
}

impl KlGapConfig {
    pub fn new(source: DataSource, master_seed: u64) -> Self {
        Self {
            source,
            alpha_grid: ALPHA_GRID.to_vec(),
            replicates: 10,
            n_re: 1000,
            n_te: 1000,
            master_seed,
            bins: None,
            pbr: PbrConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha_grid.is_empty() || self.alpha_grid.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
            return Err(Error::invalid("alpha grid must be non-empty and nonnegative"));
        }
        if self.replicates == 0 || self.n_re == 0 || self.n_te == 0 {
            return Err(Error::invalid("replicates, n_re and n_te must be positive"));
        }
        if self.bins == Some(0) {
            return Err(Error::invalid("bin count must be positive"));
        }
        self.pbr.validate()
    }

    fn bins(&self) -> usize {
        self.bins.unwrap_or_else(|| optimal_bins_1d(self.n_re))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlGapCell {
    pub replicate: usize,
    pub alpha: f64,
    pub kl: f64,
    pub ece_recal: f64,
    pub ece_test: f64,
    pub gap: f64,
    pub final_objective: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateCorrelation {
    pub replicate: usize,
    /// `None` when KL or the gap is constant across the grid.
    pub pearson: Option<f64>,
    pub kendall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlGapSummary {
    pub bins: usize,
    pub per_replicate: Vec<ReplicateCorrelation>,
    pub positive_pearson: usize,
    pub median_pearson: Option<f64>,
    pub median_kendall: Option<f64>,
    pub pooled_pearson: Option<f64>,
    pub pooled_kendall: Option<f64>,
}

/// Split one replicate into recalibration and test sets.
fn replicate_data(cfg: &KlGapConfig, r: usize) -> Result<(PredictionSet, PredictionSet)> {
    let mut rng = cell_rng(cfg.master_seed, mix(0xDA7A, r as u64));
    let total = cfg.n_re + cfg.n_te;
    let data = cfg.source.load(Some(total), &rng)?;
    if data.len() < total {
        return Err(Error::invalid(format!(
            "dump has {} rows, need n_re + n_te = {total}",
            data.len()
        )));
    }
    let idx = match cfg.source {
        DataSource::Synthetic { .. } => (0..total).collect(),
        DataSource::Dump { .. } => shuffled_indices(data.len(), &mut rng),
    };
    Ok((data.subset(&idx[..cfg.n_re]), data.subset(&idx[cfg.n_re..total])))
}

fn defined_median(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    median(&v)
}

/// Correlation between the posterior's KL to the prior and the recalibration-to-test ECE gap.
///
/// Every replicate draws fresh recalibration and test sets and fits PBR once
/// per KL weight; fits within a replicate share their optimizer seed.
pub fn kl_gap_experiment(cfg: &KlGapConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let bins = cfg.bins();
    let splits = par::map((0..cfg.replicates).collect(), |r| {
        replicate_data(cfg, r).map_err(|e| cell_error(format!("replicate={r}"), e))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let grid: Vec<(usize, f64)> = (0..cfg.replicates)
        .flat_map(|r| cfg.alpha_grid.iter().map(move |&a| (r, a)))
        .collect();
    let cells = par::map(grid, |(r, alpha)| {
        let (recal, test) = &splits[r];
        let run = || -> Result<KlGapCell> {
            let pbr = PbrConfig {
                alpha,
                seed: mix(cfg.master_seed, r as u64),
                ..cfg.pbr.clone()
            };
            let fit = train_pbr(recal, &pbr)?;
            let (re, te) = (fit.map.apply_to(recal)?, fit.map.apply_to(test)?);
            Ok(KlGapCell {
                replicate: r,
                alpha,
                kl: fit.kl,
                ece_recal: ece_top_label(&re, bins)?,
                ece_test: ece_top_label(&te, bins)?,
                gap: ece_gap(&te, &re, bins)?,
                final_objective: fit.final_objective,
                iterations: fit.iterations,
            })
        };
        run().map_err(|e| cell_error(format!("replicate={r} alpha={alpha}"), e))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let per_replicate = (0..cfg.replicates)
        .map(|r| {
            let (kl, gap): (Vec<f64>, Vec<f64>) = cells
                .iter()
                .filter(|c| c.replicate == r)
                .map(|c| (c.kl, c.gap))
                .unzip();
            let (pearson, kendall) = if kl.len() < 2 {
                (None, None)
            } else {
                (pearson(&kl, &gap)?, kendall_tau(&kl, &gap)?)
            };
            Ok(ReplicateCorrelation {
                replicate: r,
                pearson,
                kendall,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (kl, gap): (Vec<f64>, Vec<f64>) = cells.iter().map(|c| (c.kl, c.gap)).unzip();
    let (pooled_pearson, pooled_kendall) = if kl.len() < 2 {
        (None, None)
    } else {
        (pearson(&kl, &gap)?, kendall_tau(&kl, &gap)?)
    };
    let summary = KlGapSummary {
        bins,
        positive_pearson: per_replicate.iter().filter(|c| c.pearson.is_some_and(|p| p > 0.0)).count(),
        median_pearson: defined_median(per_replicate.iter().map(|c| c.pearson)),
        median_kendall: defined_median(per_replicate.iter().map(|c| c.kendall)),
        per_replicate,
        pooled_pearson,
        pooled_kendall,
    };
    let mut notes = Vec::new();
    if summary.per_replicate.iter().any(|c| c.pearson.is_none()) {
        notes.push("some replicates have constant KL or gap; their correlations are undefined".into());
    }
    if cfg.n_re != cfg.n_te {
        notes.push(format!(
            "n_re = {} differs from n_te = {}; the generalization certificates assume equal sizes",
            cfg.n_re, cfg.n_te
        ));
    }
    Ok(ExperimentReport::new(
        ReportBody::KlGap {
            config: cfg.clone(),
            cells,
            summary,
        },
        notes,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{MulticlassMap, SyntheticSpec, SyntheticSpecK};

    fn small(alphas: Vec<f64>) -> KlGapConfig {
        let spec = SyntheticSpec::Multiclass(SyntheticSpecK::symmetric(
            3,
            1.0,
            MulticlassMap::TemperatureDistort { temperature: 2.0 },
            0,
            0,
        ));
        let mut cfg = KlGapConfig::new(DataSource::Synthetic { spec }, 4);
        cfg.alpha_grid = alphas;
        cfg.replicates = 3;
        cfg.n_re = 200;
        cfg.n_te = 200;
        cfg.pbr.max_iters = 60;
        cfg
    }

    #[test]
    fn runs_and_counts_cells() {
        let cfg = small(vec![0.0, 0.5, 1.0]);
        let report = kl_gap_experiment(&cfg).unwrap();
        let ReportBody::KlGap { cells, summary, .. } = &report.body else {
            unreachable!()
        };
        assert_eq!(cells.len(), 9);
        assert_eq!(summary.per_replicate.len(), 3);
        assert_eq!(summary.bins, 5);
        for c in cells {
            assert!((c.gap - (c.ece_test - c.ece_recal).abs()).abs() < 1e-15);
        }
    }

    #[test]
    fn single_alpha_gives_undefined_correlations() {
        let report = kl_gap_experiment(&small(vec![0.5])).unwrap();
        let ReportBody::KlGap { summary, .. } = &report.body else {
            unreachable!()
        };
        assert!(summary.per_replicate.iter().all(|c| c.pearson.is_none() && c.kendall.is_none()));
        assert_eq!(summary.positive_pearson, 0);
        assert!(!report.notes.is_empty());
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = small(vec![]);
        assert!(kl_gap_experiment(&cfg).is_err());
        cfg.alpha_grid = vec![-1.0];
        assert!(kl_gap_experiment(&cfg).is_err());
        cfg.alpha_grid = vec![0.1];
        cfg.n_te = 0;
        assert!(kl_gap_experiment(&cfg).is_err());
    }
}
