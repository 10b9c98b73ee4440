//! Prediction dumps on disk.
//!
//! CSV: mandatory header `p0,...,p{K-1},label` (probabilities) or
//! `z0,...,z{K-1},label` (logits), one sample per row.
//! JSON-lines: one object per line, `{"probs": [...], "label": y}` or
//! `{"logits": [...], "label": y}`.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prediction::PredictionSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DumpFormat {
    Csv,
    JsonLines,
}

impl DumpFormat {
    /// Guess from the file extension; anything but `.jsonl`/`.ndjson` is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl" | "ndjson") => DumpFormat::JsonLines,
            _ => DumpFormat::Csv,
        }
    }
}

impl std::str::FromStr for DumpFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(DumpFormat::Csv),
            "jsonl" | "json_lines" | "jsonlines" => Ok(DumpFormat::JsonLines),
            other => Err(Error::invalid(format!("unknown dump format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DumpMode {
    Probabilities,
    Logits,
    /// Taken from the CSV header prefix or the JSON key.
    #[default]
    Auto,
}

impl std::str::FromStr for DumpMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "probs" | "probabilities" => Ok(DumpMode::Probabilities),
            "logits" => Ok(DumpMode::Logits),
            "auto" => Ok(DumpMode::Auto),
            other => Err(Error::invalid(format!("unknown dump mode {other:?}"))),
        }
    }
}

/// Where a dump came from, echoed into reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionDump {
    pub path: String,
    pub format: DumpFormat,
    pub mode: DumpMode,
    pub k: usize,
    pub n: usize,
}

pub fn load_dump(path: impl AsRef<Path>, format: DumpFormat, mode: DumpMode) -> Result<PredictionSet> {
    let path = path.as_ref();
    let data = read_dump(BufReader::new(File::open(path)?), format, mode)?;
    log::info!(
        "loaded {}: n = {}, K = {}",
        path.display(),
        data.len(),
        data.num_classes()
    );
    Ok(data)
}

pub fn read_dump(reader: impl BufRead, format: DumpFormat, mode: DumpMode) -> Result<PredictionSet> {
    match format {
        DumpFormat::Csv => read_csv(reader, mode),
        DumpFormat::JsonLines => read_jsonl(reader, mode),
    }
}

fn build(k: usize, values: Vec<f64>, labels: Vec<usize>, logits: bool) -> Result<PredictionSet> {
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if logits {
        PredictionSet::from_logits(k, values, labels)
    } else {
        PredictionSet::from_flat(k, values, labels)
    }
}

fn read_csv(reader: impl Read, mode: DumpMode) -> Result<PredictionSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let k = header.len().saturating_sub(1);
    if k < 2 || &header[k] != "label" {
        return Err(Error::Parse {
            line: 1,
            message: "header must be p0,...,p{K-1},label or z0,...,z{K-1},label with K >= 2".into(),
        });
    }
    let prefix = header[0].chars().next().filter(|c| matches!(c, 'p' | 'z')).unwrap_or('?');
    for (j, name) in header.iter().take(k).enumerate() {
        if name != format!("{prefix}{j}") {
            return Err(Error::Parse {
                line: 1,
                message: format!("unexpected column {name:?} at position {j}"),
            });
        }
    }
    let logits = match (mode, prefix) {
        (DumpMode::Auto, p) => p == 'z',
        (DumpMode::Probabilities, 'p') => false,
        (DumpMode::Logits, 'z') => true,
        (m, p) => {
            return Err(Error::Parse {
                line: 1,
                message: format!("header prefix {p:?} does not match mode {m:?}"),
            })
        }
    };

    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::Parse {
            line,
            message: format!("row {i}: {e}"),
        })?;
        if record.len() != k + 1 {
            return Err(Error::Parse {
                line,
                message: format!("row {i}: expected {} fields, found {}", k + 1, record.len()),
            });
        }
        for field in record.iter().take(k) {
            values.push(field.parse::<f64>().map_err(|e| Error::Parse {
                line,
                message: format!("row {i}: {field:?}: {e}"),
            })?);
        }
        labels.push(parse_label(&record[k], i, line)?);
    }
    build(k, values, labels, logits)
}

fn parse_label(field: &str, row: usize, line: usize) -> Result<usize> {
    field.parse::<usize>().map_err(|e| Error::Parse {
        line,
        message: format!("row {row}: label {field:?}: {e}"),
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonRow {
    probs: Option<Vec<f64>>,
    logits: Option<Vec<f64>>,
    label: usize,
}

fn read_jsonl(reader: impl BufRead, mode: DumpMode) -> Result<PredictionSet> {
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut k = 0;
    let mut logits = None;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = labels.len();
        let parsed: JsonRow = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            message: format!("row {row}: {e}"),
        })?;
        let (v, is_logit) = match (parsed.probs, parsed.logits) {
            (Some(p), None) => (p, false),
            (None, Some(z)) => (z, true),
            _ => {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("row {row}: exactly one of \"probs\" or \"logits\" is required"),
                })
            }
        };
        match logits {
            None => {
                k = v.len();
                logits = Some(is_logit);
            }
            Some(prev) if prev != is_logit => {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("row {row}: mixes probabilities and logits"),
                })
            }
            _ => {}
        }
        if v.len() != k {
            return Err(Error::Validation(vec![crate::Violation {
                row: Some(row),
                message: format!("expected {k} classes, found {}", v.len()),
            }]));
        }
        values.extend(v);
        labels.push(parsed.label);
    }
    let is_logit = logits.unwrap_or(false);
    match (mode, is_logit) {
        (DumpMode::Probabilities, true) | (DumpMode::Logits, false) => {
            return Err(Error::invalid(format!("dump contents do not match mode {mode:?}")))
        }
        _ => {}
    }
    build(k, values, labels, is_logit)
}

/// Write a dump; logits are written when the set carries them.
pub fn write_dump(data: &PredictionSet, writer: impl Write, format: DumpFormat) -> Result<()> {
    let k = data.num_classes();
    let (prefix, key) = if data.logits().is_some() { ('z', "logits") } else { ('p', "probs") };
    let row = |i: usize| -> &[f64] {
        match data.logits() {
            Some(z) => &z[i * k..(i + 1) * k],
            None => data.row(i),
        }
    };
    match format {
        DumpFormat::Csv => {
            let mut w = csv::Writer::from_writer(writer);
            let mut header: Vec<String> = (0..k).map(|j| format!("{prefix}{j}")).collect();
            header.push("label".into());
            w.write_record(&header)?;
            for i in 0..data.len() {
                let mut rec: Vec<String> = row(i).iter().map(|v| v.to_string()).collect();
                rec.push(data.label(i).to_string());
                w.write_record(&rec)?;
            }
            w.flush()?;
        }
        DumpFormat::JsonLines => {
            let mut w = std::io::BufWriter::new(writer);
            for i in 0..data.len() {
                let obj = serde_json::json!({ key: row(i), "label": data.label(i) });
                writeln!(w, "{obj}")?;
            }
            w.flush()?;
        }
    }
    Ok(())
}
