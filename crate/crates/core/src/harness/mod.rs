//! File ingestion, experiment runners and report emission.
//!
//! Every experiment is a grid of independent cells. Cell `c` draws from its
//! own stream `(master_seed, c)`, cells run in parallel, and results are
//! collected in grid order, so serial and parallel runs give identical reports.

mod compare;
mod convergence;
pub mod io;
mod klgap;
mod report;
pub mod stats;

pub use compare::{
    compare_methods, CompareCell, CompareConfig, CompareSummary, Method, MethodSummary, MetricSummary,
    SplitRule,
};
pub use convergence::{convergence_experiment, BinRule, ConvergenceCell, ConvergenceConfig, ConvergenceSummary, NSummary};
pub use io::{load_dump, read_dump, write_dump, DumpFormat, DumpMode, PredictionDump};
pub use klgap::{kl_gap_experiment, KlGapCell, KlGapConfig, KlGapSummary, ReplicateCorrelation};
pub use report::{ExperimentReport, ReportBody, SCHEMA_VERSION};
pub use stats::{fit_loglog_slope, kendall_tau, mean_sd, median, pearson, SlopeFit};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::ece::{ece_top_label, optimal_bins_1d};
use crate::error::{Error, Result};
use crate::prediction::PredictionSet;
use crate::recal::{train_pbr, PbrConfig, PbrFit};
use crate::rng::{mix, Rng};
use crate::synthetic::SyntheticSpec;

/// KL weights searched when fitting PBR.
pub const ALPHA_GRID: [f64; 8] = [0.0, 0.01, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0];

/// Stream tag separating experiment cells from the data streams of the specs themselves.
const CELL_TAG: u64 = 0xCE11;

pub(crate) fn cell_rng(master_seed: u64, cell: u64) -> Rng {
    Rng::new(master_seed, mix(CELL_TAG, cell))
}

pub(crate) fn cell_error(cell: String, e: Error) -> Error {
    Error::Cell {
        cell,
        source: Box::new(e),
    }
}

/// Where an experiment gets its predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic { spec: SyntheticSpec },
    Dump {
        path: String,
        format: DumpFormat,
        #[serde(default)]
        mode: DumpMode,
    },
}

impl DataSource {
    pub fn dump(path: impl Into<String>) -> Self {
        let path = path.into();
        DataSource::Dump {
            format: DumpFormat::from_path(std::path::Path::new(&path)),
            path,
            mode: DumpMode::Auto,
        }
    }

    /// Dumps are read as-is; synthetic specs are drawn with `n` rows on `rng`'s stream.
    fn load(&self, n: Option<usize>, rng: &Rng) -> Result<PredictionSet> {
        match self {
            DataSource::Synthetic { spec } => {
                let spec = match n {
                    Some(n) => spec.with_n(n),
                    None => spec.clone(),
                };
                spec.with_stream(rng.master_seed(), rng.stream_id()).generate()
            }
            DataSource::Dump { path, format, mode } => load_dump(path, *format, *mode),
        }
    }
}

/// Deterministic permutation of `0..n`.
pub fn shuffled_indices(n: usize, rng: &mut Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

/// Fit PBR for every KL weight in `grid` and keep the fit with the lowest ECE
/// on the recalibration set itself (first one on ties).
pub fn select_alpha(recal: &PredictionSet, base: &PbrConfig, grid: &[f64]) -> Result<(f64, PbrFit)> {
    if grid.is_empty() {
        return Err(Error::invalid("alpha grid is empty"));
    }
    let bins = optimal_bins_1d(recal.len());
    let mut best: Option<(f64, f64, PbrFit)> = None;
    for &alpha in grid {
        let fit = train_pbr(recal, &PbrConfig { alpha, ..base.clone() })?;
        let ece = ece_top_label(&fit.map.apply_to(recal)?, bins)?;
        if best.as_ref().is_none_or(|b| ece < b.1) {
            best = Some((alpha, ece, fit));
        }
    }
    let (alpha, _, fit) = best.expect("grid is non-empty");
    Ok((alpha, fit))
}

/// Named synthetic specs used by the command line and the acceptance suite.
///
/// The rate presets sit in the noise-dominated regime (`TCE` of order `1e-3`)
/// over `n` up to `5·10⁴`, where the estimation term of the bias dominates.
pub const PRESETS: [&str; 5] = [
    "binary-sine",
    "binary-identity",
    "k3-mixture",
    "temperature-distort",
    "calibrated",
];

pub fn preset(name: &str) -> Option<SyntheticSpec> {
    use crate::synthetic::{
        ConfidenceLaw, MiscalibrationMap1D, MulticlassMap, SyntheticSpec1D, SyntheticSpecK,
    };
    let binary = |map| {
        SyntheticSpec::Binary(SyntheticSpec1D {
            confidence: ConfidenceLaw::Uniform { lo: 0.55, hi: 0.95 },
            map,
            n: 1000,
            seed: 0,
            stream: 0,
        })
    };
    let k3 = |map| SyntheticSpec::Multiclass(SyntheticSpecK::symmetric(3, 1.0, map, 1000, 0));
    Some(match name {
        "binary-sine" => binary(MiscalibrationMap1D::Sine {
            amplitude: 0.002,
            frequency: 2.0,
        }),
        "binary-identity" => binary(MiscalibrationMap1D::Identity),
        "k3-mixture" => k3(MulticlassMap::MixtureUniform { beta: 0.01 }),
        "temperature-distort" => k3(MulticlassMap::TemperatureDistort { temperature: 2.0 }),
        "calibrated" => k3(MulticlassMap::Identity),
        _ => return None,
    })
}
