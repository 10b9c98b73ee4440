use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::compare::{compare_methods, CompareCell, CompareConfig, CompareSummary};
use super::convergence::{convergence_experiment, ConvergenceCell, ConvergenceConfig, ConvergenceSummary};
use super::klgap::{kl_gap_experiment, KlGapCell, KlGapConfig, KlGapSummary};

pub const SCHEMA_VERSION: u32 = 1;

/// Output of an experiment runner. The embedded config is enough to rerun it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema: u32,
    #[serde(flatten)]
    pub body: ReportBody,
    #[serde(default)]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "snake_case")]
pub enum ReportBody {
    Convergence {
        config: ConvergenceConfig,
        cells: Vec<ConvergenceCell>,
        summary: ConvergenceSummary,
    },
    KlGap {
        config: KlGapConfig,
        cells: Vec<KlGapCell>,
        summary: KlGapSummary,
    },
    Compare {
        config: CompareConfig,
        cells: Vec<CompareCell>,
        summary: CompareSummary,
    },
}

impl ExperimentReport {
    pub(crate) fn new(body: ReportBody, notes: Vec<String>) -> Self {
        Self {
            schema: SCHEMA_VERSION,
            body,
            notes,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.body {
            ReportBody::Convergence { .. } => "convergence",
            ReportBody::KlGap { .. } => "kl_gap",
            ReportBody::Compare { .. } => "compare",
        }
    }

    /// Run the experiment again from the embedded config.
    pub fn replay(&self) -> Result<ExperimentReport> {
        match &self.body {
            ReportBody::Convergence { config, .. } => convergence_experiment(config),
            ReportBody::KlGap { config, .. } => kl_gap_experiment(config),
            ReportBody::Compare { config, .. } => compare_methods(config),
        }
    }

    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let report: ExperimentReport = serde_json::from_reader(reader)?;
        if report.schema != SCHEMA_VERSION {
            return Err(Error::invalid(format!(
                "unsupported report schema {} (expected {SCHEMA_VERSION})",
                report.schema
            )));
        }
        Ok(report)
    }

    pub fn write_json(&self, writer: impl Write) -> Result<()> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }

    /// One CSV row per grid cell.
    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        match &self.body {
            ReportBody::Convergence { cells, .. } => cells.iter().try_for_each(|c| w.serialize(c))?,
            ReportBody::KlGap { cells, .. } => cells.iter().try_for_each(|c| w.serialize(c))?,
            ReportBody::Compare { cells, .. } => cells.iter().try_for_each(|c| w.serialize(c))?,
        }
        w.flush()?;
        Ok(())
    }
}
