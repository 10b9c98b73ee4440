use serde::{Deserialize, Serialize};

use crate::ece::{ece_top_label, optimal_bins_1d};
use crate::error::{Error, Result};
use crate::par;
use crate::prediction::PredictionSet;
use crate::recal::{brier_score, softmax_cross_entropy, temperature_scaling_fit, PbrConfig, PbrObjective};

use super::report::{ExperimentReport, ReportBody};
use super::stats::mean_sd;
use super::{cell_error, cell_rng, select_alpha, shuffled_indices, DataSource, ALPHA_GRID};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Uncalibrated,
    Temperature,
    /// PBR on the expected Brier score.
    Pbr,
    /// PBR on expected cross-entropy plus Brier score.
    PbrTotal,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Uncalibrated, Method::Temperature, Method::Pbr, Method::PbrTotal];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Uncalibrated => "uncalibrated",
            Method::Temperature => "temperature",
            Method::Pbr => "pbr",
            Method::PbrTotal => "pbr_total",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    /// One fold recalibrates, all remaining rows test (`n_re = n / folds`).
    #[default]
    OneFoldRecal,
    /// Fold `f` recalibrates and fold `f + 1` tests, so `n_te = n_re`.
    Equal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareConfig {
    pub source: DataSource,
    pub methods: Vec<Method>,
    pub folds: usize,
    #[serde(default)]
    pub split: SplitRule,
    /// Test-set bins; defaults to `⌊n_te^{1/3}⌋`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
    pub alpha_grid: Vec<f64>,
    pub pbr: PbrConfig,
    pub master_seed: u64,
}

impl CompareConfig {
    pub fn new(source: DataSource, master_seed: u64) -> Self {
        Self {
            source,
            methods: Method::ALL.to_vec(),
            folds: 10,
            split: SplitRule::OneFoldRecal,
            bins: None,
            alpha_grid: ALPHA_GRID.to_vec(),
            pbr: PbrConfig::default(),
            master_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::invalid("need at least 2 folds"));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("no methods selected"));
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return Err(Error::invalid(format!("method {} listed twice", m.name())));
            }
        }
        if self.bins == Some(0) {
            return Err(Error::invalid("bin count must be positive"));
        }
        if self.methods.iter().any(|m| matches!(m, Method::Pbr | Method::PbrTotal)) {
            if self.alpha_grid.is_empty() || self.alpha_grid.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
                return Err(Error::invalid("alpha grid must be non-empty and nonnegative"));
            }
            self.pbr.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareCell {
    pub fold: usize,
    pub method: Method,
    pub ece: f64,
    pub accuracy: f64,
    pub brier: f64,
    pub nll: f64,
    /// KL weight picked on the recalibration set (PBR methods only).
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub sd: f64,
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub ece: MetricSummary,
    pub accuracy: MetricSummary,
    pub brier: MetricSummary,
    pub nll: MetricSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareSummary {
    pub n: usize,
    pub n_re: usize,
    pub n_te: usize,
    pub bins: usize,
    pub methods: Vec<MethodSummary>,
}

fn fold_indices(n: usize, cfg: &CompareConfig) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    let size = n / cfg.folds;
    if size == 0 {
        return Err(Error::invalid(format!("{n} rows cannot fill {} folds", cfg.folds)));
    }
    let order = shuffled_indices(n, &mut cell_rng(cfg.master_seed, u64::MAX));
    let chunk = |f: usize| order[f * size..(f + 1) * size].to_vec();
    Ok((0..cfg.folds)
        .map(|f| {
            let recal = chunk(f);
            let test = match cfg.split {
                SplitRule::OneFoldRecal => order
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| i / size != f || *i >= cfg.folds * size)
                    .map(|(_, &j)| j)
                    .collect(),
                SplitRule::Equal => chunk((f + 1) % cfg.folds),
            };
            (recal, test)
        })
        .collect())
}

/// Fit `method` on the recalibration rows and return the recalibrated test rows.
fn recalibrate(method: Method, recal: &PredictionSet, test: &PredictionSet, cfg: &CompareConfig, fold: usize) -> Result<(PredictionSet, Option<f64>)> {
    match method {
        Method::Uncalibrated => Ok((test.clone(), None)),
        Method::Temperature => Ok((temperature_scaling_fit(recal)?.apply_to(test)?, None)),
        Method::Pbr | Method::PbrTotal => {
            let objective = if method == Method::Pbr {
                PbrObjective::BrierOnly
            } else {
                PbrObjective::BrierPlusLoss
            };
            let base = PbrConfig {
                objective,
                seed: crate::rng::mix(cfg.master_seed, fold as u64),
                ..cfg.pbr.clone()
            };
            let (alpha, fit) = select_alpha(recal, &base, &cfg.alpha_grid)?;
            Ok((fit.map.apply_to(test)?, Some(alpha)))
        }
    }
}

fn summarize(cells: &[CompareCell], methods: &[Method]) -> Vec<MethodSummary> {
    let metric = |m: Method, f: fn(&CompareCell) -> f64| {
        let v: Vec<f64> = cells.iter().filter(|c| c.method == m).map(f).collect();
        let (mean, sd) = mean_sd(&v);
        MetricSummary { mean, sd, best: false }
    };
    let mut out: Vec<MethodSummary> = methods
        .iter()
        .map(|&m| MethodSummary {
            method: m,
            ece: metric(m, |c| c.ece),
            accuracy: metric(m, |c| c.accuracy),
            brier: metric(m, |c| c.brier),
            nll: metric(m, |c| c.nll),
        })
        .collect();
    type Field = fn(&mut MethodSummary) -> &mut MetricSummary;
    let fields: [(Field, bool); 4] = [
        (|s| &mut s.ece, false),
        (|s| &mut s.accuracy, true),
        (|s| &mut s.brier, false),
        (|s| &mut s.nll, false),
    ];
    for (field, higher_is_better) in fields {
        let means: Vec<f64> = out.iter_mut().map(|s| field(s).mean).collect();
        let best = if higher_is_better {
            means.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        } else {
            means.iter().copied().fold(f64::INFINITY, f64::min)
        };
        for s in out.iter_mut() {
            let m = field(s);
            m.best = m.mean == best;
        }
    }
    out
}

/// Test-set ECE, accuracy, Brier score and NLL of each method over seeded folds.
pub fn compare_methods(cfg: &CompareConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let data = cfg.source.load(None, &cell_rng(cfg.master_seed, u64::MAX - 1))?;
    let folds = fold_indices(data.len(), cfg)?;
    let (n_re, n_te) = (folds[0].0.len(), folds[0].1.len());
    let bins = cfg.bins.unwrap_or_else(|| optimal_bins_1d(n_te));

    let grid: Vec<(usize, Method)> = (0..cfg.folds)
        .flat_map(|f| cfg.methods.iter().map(move |&m| (f, m)))
        .collect();
    let cells = par::map(grid, |(fold, method)| {
        let (ri, ti) = &folds[fold];
        let run = || -> Result<CompareCell> {
            let (recal, test) = (data.subset(ri), data.subset(ti));
            let (out, alpha) = recalibrate(method, &recal, &test, cfg, fold)?;
            Ok(CompareCell {
                fold,
                method,
                ece: ece_top_label(&out, bins)?,
                accuracy: out.accuracy(),
                brier: brier_score(&out)?,
                nll: softmax_cross_entropy(&out)?,
                alpha,
            })
        };
        run().map_err(|e| cell_error(format!("fold={fold} method={}", method.name()), e))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut notes = Vec::new();
    if n_re != n_te {
        notes.push(format!(
            "recalibration folds have n_re = {n_re} rows and test sets n_te = {n_te}; \
             the recalibration certificates assume n_re = n_te (use the equal split for that)"
        ));
    }
    let summary = CompareSummary {
        n: data.len(),
        n_re,
        n_te,
        bins,
        methods: summarize(&cells, &cfg.methods),
    };
    Ok(ExperimentReport::new(
        ReportBody::Compare {
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

    fn config(map: MulticlassMap, n: usize, seed: u64) -> CompareConfig {
        let spec = SyntheticSpec::Multiclass(SyntheticSpecK::symmetric(4, 1.0, map, n, seed));
        let mut cfg = CompareConfig::new(DataSource::Synthetic { spec }, seed);
        cfg.folds = 4;
        cfg.alpha_grid = vec![0.0, 0.5];
        cfg.pbr.max_iters = 150;
        cfg
    }

    fn summary(report: &ExperimentReport) -> &CompareSummary {
        let ReportBody::Compare { summary, .. } = &report.body else {
            unreachable!()
        };
        summary
    }

    #[test]
    fn folds_partition_rows() {
        let cfg = config(MulticlassMap::Identity, 103, 0);
        let folds = fold_indices(103, &cfg).unwrap();
        for (recal, test) in &folds {
            assert_eq!(recal.len(), 25);
            assert_eq!(test.len(), 78);
            let mut all: Vec<usize> = recal.iter().chain(test).copied().collect();
            all.sort();
            assert_eq!(all, (0..103).collect::<Vec<_>>());
        }
        let mut recal_union: Vec<usize> = folds.iter().flat_map(|f| f.0.clone()).collect();
        recal_union.sort();
        recal_union.dedup();
        assert_eq!(recal_union.len(), 100);

        let equal = CompareConfig { split: SplitRule::Equal, ..cfg };
        for (recal, test) in fold_indices(103, &equal).unwrap() {
            assert_eq!(recal.len(), test.len());
            assert!(recal.iter().all(|i| !test.contains(i)));
        }
    }

    #[test]
    fn temperature_distortion_is_repaired() {
        let report = compare_methods(&config(MulticlassMap::TemperatureDistort { temperature: 2.0 }, 4000, 1)).unwrap();
        let s = summary(&report);
        let ece = |m: Method| s.methods.iter().find(|x| x.method == m).unwrap().ece.mean;
        assert!(ece(Method::Temperature) < ece(Method::Uncalibrated));
        assert!(ece(Method::Pbr) < ece(Method::Uncalibrated));
        assert!(ece(Method::PbrTotal) < ece(Method::Uncalibrated));
        assert!(!s.methods.iter().find(|x| x.method == Method::Uncalibrated).unwrap().ece.best);
        assert_eq!(s.bins, optimal_bins_1d(3000));
        assert_eq!(report.notes.len(), 1);
    }

    #[test]
    fn calibrated_data_has_nothing_to_fix() {
        let report = compare_methods(&config(MulticlassMap::Identity, 4000, 2)).unwrap();
        let s = summary(&report);
        let base = &s.methods[0].ece;
        for m in &s.methods[1..] {
            assert!(m.ece.mean - m.ece.sd <= base.mean + base.sd, "{:?}", m.method);
        }
    }

    #[test]
    fn single_method_report() {
        let mut cfg = config(MulticlassMap::Identity, 400, 3);
        cfg.methods = vec![Method::Uncalibrated];
        let report = compare_methods(&cfg).unwrap();
        let s = summary(&report);
        assert_eq!(s.methods.len(), 1);
        assert!(s.methods[0].ece.best && s.methods[0].accuracy.best);
    }

    #[test]
    fn temperature_keeps_accuracy() {
        let mut cfg = config(MulticlassMap::TemperatureDistort { temperature: 1.5 }, 800, 4);
        cfg.methods = vec![Method::Uncalibrated, Method::Temperature];
        let report = compare_methods(&cfg).unwrap();
        let ReportBody::Compare { cells, .. } = &report.body else {
            unreachable!()
        };
        for pair in cells.chunks(2) {
            assert_eq!(pair[0].accuracy, pair[1].accuracy);
        }
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = config(MulticlassMap::Identity, 100, 5);
        cfg.folds = 1;
        assert!(compare_methods(&cfg).is_err());
        cfg.folds = 200;
        assert!(compare_methods(&cfg).is_err());
        cfg.folds = 2;
        cfg.methods = vec![Method::Pbr, Method::Pbr];
        assert!(compare_methods(&cfg).is_err());
        cfg.methods = vec![];
        assert!(compare_methods(&cfg).is_err());
        assert!("pbr_total".parse::<Method>().is_ok() && "platt".parse::<Method>().is_err());
    }
}
