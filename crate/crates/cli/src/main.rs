use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use calib_core::bounds::{evaluate, joint_acc_tce_bound, BoundCertificate, BoundInputs, BoundKind, LambdaChoice};
use calib_core::ece::{
    bin_stats_1d, ece_full_k, ece_partial_k, ece_top_label, optimal_bins_1d, optimal_bins_per_dim_k,
};
use calib_core::harness::{
    compare_methods, convergence_experiment, kl_gap_experiment, load_dump, preset, select_alpha, write_dump,
    BinRule, CompareConfig, ConvergenceConfig, DataSource, DumpFormat, DumpMode, ExperimentReport, KlGapConfig,
    Method, SplitRule, ALPHA_GRID, PRESETS,
};
use calib_core::recal::{
    brier_score, softmax_cross_entropy, temperature_scaling_fit, train_pbr, MapFamily, PbrConfig, PbrObjective,
};
use calib_core::synthetic::SyntheticSpec;
use calib_core::PredictionSet;

#[derive(Parser)]
#[command(name = "calib", version, about = "Calibration-error estimation, certificates and recalibration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Top-label or multiclass ECE of a prediction dump.
    Ece(EceArgs),
    /// Draw a synthetic prediction dump.
    Synthesize(SynthesizeArgs),
    /// Evaluate PAC-Bayes certificates.
    Bounds(BoundsArgs),
    /// Fit a recalibration map on a prediction dump.
    Recalibrate(RecalibrateArgs),
    /// Run a seeded experiment grid.
    Experiment {
        #[command(subcommand)]
        kind: ExperimentKind,
    },
}

#[derive(Subcommand)]
enum ExperimentKind {
    /// Median |TCE - ECE| against n and its log-log slope.
    Convergence(ConvergenceArgs),
    /// Correlation between posterior KL and the recalibration-to-test ECE gap.
    Klgap(KlGapArgs),
    /// Recalibration methods compared over seeded folds.
    Compare(CompareArgs),
}

#[derive(Clone, Copy, ValueEnum, Default, PartialEq)]
enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

impl Common {
    fn writer(&self) -> Result<Box<dyn Write>> {
        Ok(match &self.out {
            Some(p) => Box::new(BufWriter::new(
                File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
            )),
            None => Box::new(BufWriter::new(io::stdout().lock())),
        })
    }

    fn emit_json(&self, value: &serde_json::Value) -> Result<()> {
        let mut w = self.writer()?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    fn emit_csv(&self, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
        let mut w = self.writer()?;
        writeln!(w, "{}", header.join(","))?;
        for row in rows {
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Args)]
struct DumpArgs {
    /// Prediction dump (CSV with header p0..,label or z0..,label; or JSON lines).
    #[arg(long)]
    input: PathBuf,
    /// csv or jsonl; guessed from the extension when omitted.
    #[arg(long)]
    dump_format: Option<String>,
    /// probs, logits or auto.
    #[arg(long, default_value = "auto")]
    mode: String,
}

impl DumpArgs {
    fn format(&self) -> Result<DumpFormat> {
        Ok(match &self.dump_format {
            Some(s) => s.parse()?,
            None => DumpFormat::from_path(&self.input),
        })
    }

    fn load(&self) -> Result<PredictionSet> {
        Ok(load_dump(&self.input, self.format()?, self.mode.parse()?)?)
    }

    fn source(&self) -> Result<DataSource> {
        Ok(DataSource::Dump {
            path: self.input.to_string_lossy().into_owned(),
            format: self.format()?,
            mode: self.mode.parse::<DumpMode>()?,
        })
    }
}

#[derive(Args)]
struct EceArgs {
    #[command(flatten)]
    dump: DumpArgs,
    /// Bins (per dimension for --all-class); defaults to the rate-optimal count.
    #[arg(long)]
    bins: Option<usize>,
    /// Hypercube ECE over all class probabilities.
    #[arg(long, conflicts_with = "classes")]
    all_class: bool,
    /// Hypercube ECE over a subset of classes, e.g. 0,2.
    #[arg(long, value_delimiter = ',')]
    classes: Option<Vec<usize>>,
    #[command(flatten)]
    common: Common,
}

fn run_ece(a: EceArgs) -> Result<()> {
    let data = a.dump.load()?;
    let n = data.len();
    let k = data.num_classes();
    let (estimator, bins, ece) = if a.all_class {
        let b = a.bins.unwrap_or_else(|| optimal_bins_per_dim_k(n, k));
        ("all_class", b, ece_full_k(&data, b)?)
    } else if let Some(classes) = &a.classes {
        let b = a.bins.unwrap_or_else(|| optimal_bins_per_dim_k(n, classes.len()));
        ("partial", b, ece_partial_k(&data, classes, b)?)
    } else {
        let b = a.bins.unwrap_or_else(|| optimal_bins_1d(n));
        ("top_label", b, ece_top_label(&data, b)?)
    };
    let table = if estimator == "top_label" {
        bin_stats_1d(&data, bins)?
    } else {
        bin_stats_1d(&data, optimal_bins_1d(n))?
    };
    match a.common.format {
        Format::Json => a.common.emit_json(&json!({
            "n": n,
            "classes": k,
            "estimator": estimator,
            "bins": bins,
            "ece": ece,
            "accuracy": data.accuracy(),
            "brier": brier_score(&data)?,
            "nll": softmax_cross_entropy(&data)?,
            "reliability": table,
        })),
        Format::Csv => {
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            a.common.emit_csv(
                &["lo", "hi", "count", "mean_confidence", "mean_hit"],
                table.iter().map(|s| {
                    vec![
                        s.lo.to_string(),
                        s.hi.to_string(),
                        s.count.to_string(),
                        opt(s.mean_confidence),
                        opt(s.mean_hit),
                    ]
                }),
            )
        }
    }
}

#[derive(Args)]
struct SpecArgs {
    /// Named synthetic spec.
    #[arg(long, conflicts_with = "spec")]
    preset: Option<String>,
    /// Synthetic spec as a JSON file or inline JSON.
    #[arg(long)]
    spec: Option<String>,
}

impl SpecArgs {
    fn resolve(&self) -> Result<Option<SyntheticSpec>> {
        if let Some(name) = &self.preset {
            return preset(name)
                .map(Some)
                .ok_or_else(|| invalid(format!("unknown preset {name:?}; known: {}", PRESETS.join(", "))));
        }
        let Some(spec) = &self.spec else { return Ok(None) };
        let text = if spec.trim_start().starts_with('{') {
            spec.clone()
        } else {
            std::fs::read_to_string(spec).with_context(|| format!("cannot read {spec}"))?
        };
        let spec: SyntheticSpec = serde_json::from_str(&text).map_err(calib_core::Error::from)?;
        Ok(Some(spec))
    }
}

#[derive(Args)]
struct SynthesizeArgs {
    #[command(flatten)]
    spec: SpecArgs,
    #[arg(long)]
    n: Option<usize>,
    #[command(flatten)]
    common: Common,
}

fn run_synthesize(a: SynthesizeArgs) -> Result<()> {
    let mut spec = a
        .spec
        .resolve()?
        .ok_or_else(|| invalid("give --preset or --spec"))?
        .with_stream(a.common.seed, 0);
    if let Some(n) = a.n {
        spec = spec.with_n(n);
    }
    let data = spec.generate()?;
    let format = match a.common.format {
        Format::Json => DumpFormat::JsonLines,
        Format::Csv => DumpFormat::Csv,
    };
    let mut w = a.common.writer()?;
    write_dump(&data, &mut w, format)?;
    w.flush()?;
    Ok(())
}

#[derive(Args)]
struct BoundsArgs {
    /// Bound to evaluate; all applicable bounds when omitted.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    n: usize,
    /// Total bin count.
    #[arg(long)]
    bins: u64,
    #[arg(long, default_value_t = 1.0)]
    lipschitz: f64,
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,
    /// A number, auto or sqrt_bn.
    #[arg(long, default_value = "auto")]
    lambda: String,
    #[arg(long, default_value_t = 0.0)]
    kl: f64,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    assume_density: bool,
    /// Empirical loss and Brier score added to the joint certificate.
    #[arg(long, default_value_t = 0.0)]
    empirical_loss: f64,
    #[arg(long, default_value_t = 0.0)]
    empirical_brier: f64,
    #[command(flatten)]
    common: Common,
}

fn run_bounds(a: BoundsArgs) -> Result<()> {
    let mut inputs = BoundInputs::new(a.n, a.bins, a.lipschitz, a.epsilon)
        .with_lambda(a.lambda.parse::<LambdaChoice>()?)
        .with_kl(a.kl);
    inputs.classes = a.classes;
    inputs.assume_density = a.assume_density;
    let certify = |kind: BoundKind| match kind {
        BoundKind::JointAccTce => joint_acc_tce_bound(&inputs, a.empirical_loss, a.empirical_brier),
        k => evaluate(k, &inputs),
    };
    let certs: Vec<BoundCertificate> = match &a.kind {
        Some(k) => vec![certify(k.parse()?)?],
        None => BoundKind::ALL
            .into_iter()
            .filter(|k| !(*k == BoundKind::TotalBiasTest && a.kl != 0.0))
            .filter(|k| !(*k == BoundKind::CeKBias && a.classes.is_none()))
            .map(certify)
            .collect::<calib_core::Result<_>>()?,
    };
    match a.common.format {
        Format::Json => a.common.emit_json(&serde_json::to_value(&certs)?),
        Format::Csv => a.common.emit_csv(
            &["kind", "value", "binning_term", "statistical_term", "empirical_term", "lambda"],
            certs.iter().map(|c| {
                vec![
                    c.bound_kind.name().to_string(),
                    c.value.to_string(),
                    c.binning_term.to_string(),
                    c.statistical_term.to_string(),
                    c.empirical_term.to_string(),
                    c.lambda_used.to_string(),
                ]
            }),
        ),
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RecalMethod {
    Temperature,
    Pbr,
    PbrTotal,
}

#[derive(Args)]
struct RecalibrateArgs {
    #[command(flatten)]
    dump: DumpArgs,
    #[arg(long, value_enum, default_value_t = RecalMethod::Temperature)]
    method: RecalMethod,
    /// temperature, vector_scale or affine (PBR only).
    #[arg(long, default_value = "temperature")]
    family: String,
    /// KL weight; picked from the default grid on the data when omitted.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Evaluation bins; defaults to the rate-optimal count.
    #[arg(long)]
    bins: Option<usize>,
    #[command(flatten)]
    common: Common,
}

fn run_recalibrate(a: RecalibrateArgs) -> Result<()> {
    let data = a.dump.load()?;
    let bins = a.bins.unwrap_or_else(|| optimal_bins_1d(data.len()));
    let (map, fit) = match a.method {
        RecalMethod::Temperature => (temperature_scaling_fit(&data)?, None),
        RecalMethod::Pbr | RecalMethod::PbrTotal => {
            let mut cfg = PbrConfig {
                family: a.family.parse::<MapFamily>()?,
                seed: a.common.seed,
                objective: match a.method {
                    RecalMethod::PbrTotal => PbrObjective::BrierPlusLoss,
                    _ => PbrObjective::BrierOnly,
                },
                ..PbrConfig::default()
            };
            if let Some(m) = a.max_iters {
                cfg.max_iters = m;
            }
            let fit = match a.alpha {
                Some(alpha) => train_pbr(&data, &PbrConfig { alpha, ..cfg })?,
                None => select_alpha(&data, &cfg, &ALPHA_GRID)?.1,
            };
            (fit.map.clone(), Some(fit))
        }
    };
    let out = map.apply_to(&data)?;
    match a.common.format {
        Format::Json => {
            let mut v = json!({
                "n": data.len(),
                "bins": bins,
                "map": map,
                "ece_before": ece_top_label(&data, bins)?,
                "ece_after": ece_top_label(&out, bins)?,
                "brier_before": brier_score(&data)?,
                "brier_after": brier_score(&out)?,
            });
            if let Some(fit) = fit {
                v["alpha"] = json!(fit.config.alpha);
                v["kl"] = json!(fit.kl);
                v["final_objective"] = json!(fit.final_objective);
                v["iterations"] = json!(fit.iterations);
                v["converged"] = json!(fit.converged);
                v["posterior"] = serde_json::to_value(&fit.posterior)?;
            }
            a.common.emit_json(&v)
        }
        Format::Csv => {
            let mut w = a.common.writer()?;
            write_dump(&out, &mut w, DumpFormat::Csv)?;
            w.flush()?;
            Ok(())
        }
    }
}

#[derive(Args)]
struct SourceArgs {
    #[command(flatten)]
    spec: SpecArgs,
    /// Prediction dump instead of a synthetic spec.
    #[arg(long, conflicts_with_all = ["preset", "spec"])]
    input: Option<PathBuf>,
    #[arg(long)]
    dump_format: Option<String>,
    #[arg(long, default_value = "auto")]
    mode: String,
}

impl SourceArgs {
    fn resolve(&self, default_preset: &str) -> Result<DataSource> {
        if let Some(input) = &self.input {
            return DumpArgs {
                input: input.clone(),
                dump_format: self.dump_format.clone(),
                mode: self.mode.clone(),
            }
            .source();
        }
        let spec = match self.spec.resolve()? {
            Some(s) => s,
            None => preset(default_preset).expect("default preset exists"),
        };
        Ok(DataSource::Synthetic { spec })
    }
}

/// Read `--config`: a bare config, or a previous report whose config is replayed.
fn read_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<std::result::Result<ExperimentReport, T>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(calib_core::Error::from)?;
    if value.get("schema").is_some() {
        return Ok(Ok(ExperimentReport::from_reader(text.as_bytes())?));
    }
    Ok(Err(serde_json::from_value(value).map_err(calib_core::Error::from)?))
}

fn emit_report(report: &ExperimentReport, common: &Common) -> Result<()> {
    let mut w = common.writer()?;
    match common.format {
        Format::Json => {
            report.write_json(&mut w)?;
            writeln!(w)?;
        }
        Format::Csv => report.write_csv(&mut w)?,
    }
    w.flush()?;
    Ok(())
}

fn run_report<T: serde::de::DeserializeOwned>(
    config: Option<&Path>,
    kind: &str,
    build: impl FnOnce() -> Result<T>,
    run: impl FnOnce(&T) -> calib_core::Result<ExperimentReport>,
    common: &Common,
) -> Result<()> {
    let report = match config.map(read_config::<T>).transpose()? {
        Some(Ok(report)) => {
            if report.kind() != kind {
                return Err(invalid(format!("report is a {} experiment, not {kind}", report.kind())));
            }
            report.replay()?
        }
        Some(Err(cfg)) => run(&cfg)?,
        None => run(&build()?)?,
    };
    for note in &report.notes {
        log::info!("{note}");
    }
    emit_report(&report, common)
}

fn parse_grid(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| invalid(format!("bad number {x:?} in grid"))))
        .collect()
}

#[derive(Args)]
struct ConvergenceArgs {
    #[command(flatten)]
    spec: SpecArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [500, 1000, 2500, 5000, 10_000, 25_000, 50_000])]
    n_grid: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    seeds: usize,
    /// Fixed bin count (per dimension for multiclass specs) instead of the rate-optimal rule.
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    oracle_samples: Option<usize>,
    /// Config JSON, or a report to replay; other experiment flags are ignored.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct KlGapArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Comma-separated KL weights.
    #[arg(long)]
    alpha_grid: Option<String>,
    #[arg(long, default_value_t = 10)]
    replicates: usize,
    #[arg(long, default_value_t = 1000)]
    n_re: usize,
    #[arg(long, default_value_t = 1000)]
    n_te: usize,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long, default_value = "temperature")]
    family: String,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    OneFold,
    Equal,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long, value_delimiter = ',', default_value = "uncalibrated,temperature,pbr,pbr_total")]
    methods: Vec<String>,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, value_enum, default_value_t = Split::OneFold)]
    split: Split,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    alpha_grid: Option<String>,
    #[arg(long, default_value = "temperature")]
    family: String,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

fn run_experiment(kind: ExperimentKind) -> Result<()> {
    match kind {
        ExperimentKind::Convergence(a) => run_report(
            a.config.as_deref(),
            "convergence",
            || {
                let spec = a.spec.resolve()?.unwrap_or_else(|| preset("binary-sine").expect("preset exists"));
                let mut cfg = ConvergenceConfig::new(spec, a.n_grid.clone(), a.seeds, a.common.seed);
                if let Some(b) = a.bins {
                    cfg.bin_rule = BinRule::Fixed(b);
                }
                if let Some(m) = a.oracle_samples {
                    cfg.oracle_samples = m;
                }
                Ok(cfg)
            },
            convergence_experiment,
            &a.common,
        ),
        ExperimentKind::Klgap(a) => run_report(
            a.config.as_deref(),
            "kl_gap",
            || {
                let mut cfg = KlGapConfig::new(a.source.resolve("temperature-distort")?, a.common.seed);
                if let Some(g) = &a.alpha_grid {
                    cfg.alpha_grid = parse_grid(g)?;
                }
                cfg.replicates = a.replicates;
                cfg.n_re = a.n_re;
                cfg.n_te = a.n_te;
                cfg.bins = a.bins;
                cfg.pbr.family = a.family.parse()?;
                Ok(cfg)
            },
            kl_gap_experiment,
            &a.common,
        ),
        ExperimentKind::Compare(a) => run_report(
            a.config.as_deref(),
            "compare",
            || {
                let mut cfg = CompareConfig::new(a.source.resolve("temperature-distort")?, a.common.seed);
                cfg.methods = a.methods.iter().map(|m| m.parse::<Method>()).collect::<calib_core::Result<_>>()?;
                cfg.folds = a.folds;
                cfg.split = match a.split {
                    Split::OneFold => SplitRule::OneFoldRecal,
                    Split::Equal => SplitRule::Equal,
                };
                cfg.bins = a.bins;
                if let Some(g) = &a.alpha_grid {
                    cfg.alpha_grid = parse_grid(g)?;
                }
                cfg.pbr.family = a.family.parse()?;
                Ok(cfg)
            },
            compare_methods,
            &a.common,
        ),
    }
}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(calib_core::Error::InvalidInput(msg.into()))
}

/// 3 for failed computations, 2 for everything caused by the input.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<calib_core::Error>() {
        Some(e) if !e.is_validation() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ece(a) => run_ece(a),
        Command::Synthesize(a) => run_synthesize(a),
        Command::Bounds(a) => run_bounds(a),
        Command::Recalibrate(a) => run_recalibrate(a),
        Command::Experiment { kind } => run_experiment(kind),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&invalid("x")), 2);
        assert_eq!(exit_code(&anyhow!("plain")), 2);
        let cell = calib_core::Error::Cell {
            cell: "n=1".into(),
            source: Box::new(calib_core::Error::NonFinite {
                iteration: 0,
                detail: "nan".into(),
            }),
        };
        assert_eq!(exit_code(&anyhow!(cell)), 3);
    }
}
