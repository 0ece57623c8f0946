//! Command-line front door: validate, calibrate, evaluate, screen, simulate,
//! roc and serve, composed via files so each step is auditable.
//!
//! Exit codes: 0 on success, 1 on data/validation errors, 2 on usage errors.
//! With `--json`, stdout carries only machine-readable payloads; diagnostics
//! go to stderr. All randomized paths take `--seed` (default 0), never the
//! wall clock, so repeated invocations are byte-identical.

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};

use screeneval::bootstrap::{BootstrapConfig, ResampleUnit, EXCLUSION_WARN_FRACTION};
use screeneval::calibration::{calibrate, CalibrationArtifact, Level};
use screeneval::dataset::{parse_path, Dataset, Format};
use screeneval::metrics::ThresholdMode;
use screeneval::report::{build_confusion_report, build_performance_report, export_roc};
use screeneval::simulate::{simulate_cohort, SimConfig};
use screeneval::voting::{aggregate_dataset, VoteStrategy};
use screeneval_service::{ServiceConfig, DEFAULT_MAX_BODY_BYTES, DEFAULT_MAX_REPLICATES};

#[derive(Parser)]
#[command(name = "screeneval", version, about = "Evaluation, calibration and screening decisions for multi-image-per-subject binary classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a dataset and report every schema violation.
    Validate(ValidateArgs),
    /// Select the best-F1 threshold on the validation split and freeze it.
    Calibrate(CalibrateArgs),
    /// Build performance (and optionally confusion) reports on the test split.
    Evaluate(EvaluateArgs),
    /// Apply a calibrated threshold to every subject in a dataset.
    Screen(ScreenArgs),
    /// Generate a synthetic dataset from a JSON config.
    Simulate(SimulateArgs),
    /// Export a ROC curve as CSV (and optionally SVG).
    Roc(RocArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Input dataset path (.csv or .json).
    #[arg(long)]
    input: PathBuf,
    /// Override the format implied by the extension.
    #[arg(long, value_parser = parse_format)]
    format: Option<Format>,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Emit the validation report as JSON on stdout.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Calibration level.
    #[arg(long, value_parser = parse_level)]
    level: Level,
    /// Vote strategy (required at subject level).
    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<VoteStrategy>,
    /// Restrict calibration to one cohort.
    #[arg(long)]
    cohort: Option<String>,
    #[arg(long, value_parser = parse_mode, default_value = "ge")]
    threshold_mode: ThresholdMode,
    /// Where to write the artifact JSON (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Emit the artifact JSON on stdout.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Calibration artifact files (comma-separated or repeated).
    #[arg(long, required = true, value_delimiter = ',')]
    artifacts: Vec<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    replicates: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Bootstrap resampling unit.
    #[arg(long, value_parser = parse_unit, default_value = "photo")]
    unit: ResampleUnit,
    /// Restrict the report to one cohort.
    #[arg(long)]
    cohort: Option<String>,
    #[arg(long, value_parser = parse_mode, default_value = "ge")]
    threshold_mode: ThresholdMode,
    /// Where to write the performance report JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Where to write the confusion report JSON.
    #[arg(long)]
    confusion_out: Option<PathBuf>,
    /// Emit the performance report JSON on stdout instead of the text table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ScreenArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Calibration artifact files; must include a subject-level artifact
    /// for the chosen strategy.
    #[arg(long, required = true, value_delimiter = ',')]
    artifacts: Vec<PathBuf>,
    #[arg(long, value_parser = parse_strategy)]
    strategy: VoteStrategy,
    #[arg(long, value_parser = parse_mode, default_value = "ge")]
    threshold_mode: ThresholdMode,
    /// Where to write decisions CSV (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Emit decisions as JSON instead of CSV.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SimulateArgs {
    /// Simulation config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path (.csv or .json; stdout CSV when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RocArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, value_parser = parse_level)]
    level: Level,
    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<VoteStrategy>,
    /// Restrict the curve to one cohort.
    #[arg(long)]
    cohort: Option<String>,
    /// Where to write the operating-point CSV.
    #[arg(long)]
    out: PathBuf,
    /// Optionally render the curve as SVG.
    #[arg(long)]
    svg: Option<PathBuf>,
    /// Emit a `{auc, points}` summary on stdout.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ServeArgs {
    /// Listen address.
    #[arg(long, env = "SCREENEVAL_LISTEN", default_value = "127.0.0.1:8080")]
    listen: SocketAddr,
    /// Calibration artifact files loaded at startup.
    #[arg(long, env = "SCREENEVAL_ARTIFACTS", required = true, value_delimiter = ',')]
    artifacts: Vec<PathBuf>,
    #[arg(long, value_parser = parse_mode, default_value = "ge")]
    threshold_mode: ThresholdMode,
    /// Per-request bootstrap replicate cap.
    #[arg(long, env = "SCREENEVAL_MAX_REPLICATES", default_value_t = DEFAULT_MAX_REPLICATES)]
    max_replicates: u32,
    /// Request body size cap in bytes.
    #[arg(long, env = "SCREENEVAL_MAX_BODY_BYTES", default_value_t = DEFAULT_MAX_BODY_BYTES)]
    max_body_bytes: usize,
}

fn parse_level(s: &str) -> Result<Level, screeneval::Error> {
    s.parse()
}

fn parse_strategy(s: &str) -> Result<VoteStrategy, screeneval::Error> {
    s.parse()
}

fn parse_mode(s: &str) -> Result<ThresholdMode, screeneval::Error> {
    s.parse()
}

fn parse_unit(s: &str) -> Result<ResampleUnit, screeneval::Error> {
    s.parse()
}

fn parse_format(s: &str) -> Result<Format, String> {
    match s {
        "csv" => Ok(Format::Csv),
        "json" => Ok(Format::Json),
        other => Err(format!("unknown format `{other}` (expected `csv` or `json`)")),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Validate(args) => run_validate(args),
        Command::Calibrate(args) => run_calibrate(args).map(|()| ExitCode::SUCCESS),
        Command::Evaluate(args) => run_evaluate(args).map(|()| ExitCode::SUCCESS),
        Command::Screen(args) => run_screen(args).map(|()| ExitCode::SUCCESS),
        Command::Simulate(args) => run_simulate(args).map(|()| ExitCode::SUCCESS),
        Command::Roc(args) => run_roc(args).map(|()| ExitCode::SUCCESS),
        Command::Serve(args) => run_serve(args).map(|()| ExitCode::SUCCESS),
    }
}

/// Parses and validates a dataset; a dirty validation report goes to stderr
/// and aborts with a data error.
fn load_validated(input: &InputArgs) -> anyhow::Result<Dataset> {
    let dataset = parse_path(&input.input, input.format)
        .with_context(|| format!("failed to read {}", input.input.display()))?;
    let report = dataset.validate();
    if !report.is_clean() {
        eprintln!("{report}");
        bail!("dataset {} failed validation", input.input.display());
    }
    Ok(dataset)
}

fn load_artifacts(paths: &[PathBuf]) -> anyhow::Result<Vec<CalibrationArtifact>> {
    paths
        .iter()
        .map(|p| {
            CalibrationArtifact::load(p)
                .with_context(|| format!("failed to load artifact {}", p.display()))
        })
        .collect()
}

fn write_output(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("failed to write {}", path.display()))
}

fn run_validate(args: ValidateArgs) -> anyhow::Result<ExitCode> {
    let dataset = parse_path(&args.input.input, args.input.format)
        .with_context(|| format!("failed to read {}", args.input.input.display()))?;
    let report = dataset.validate();
    if args.json {
        println!("{}", report.to_json_string());
    } else if report.is_clean() {
        println!("{report}");
    } else {
        eprintln!("{report}");
    }
    Ok(if report.is_clean() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn run_calibrate(args: CalibrateArgs) -> anyhow::Result<()> {
    let dataset = load_validated(&args.input)?;
    let dataset = match &args.cohort {
        Some(cohort) => dataset.filtered(None, Some(cohort)),
        None => dataset,
    };
    let artifact = calibrate(&dataset, args.level, args.strategy, args.threshold_mode)?;
    let json = artifact.to_json_string();
    if let Some(out) = &args.out {
        write_output(out, json.as_bytes())?;
    }
    if args.json {
        print!("{json}");
    } else if args.out.is_some() {
        println!(
            "calibrated {}: threshold={} f1={:.3} ({})",
            artifact.key(),
            artifact.threshold,
            artifact.achieved_f1,
            artifact.validation_counts,
        );
    } else {
        print!("{json}");
    }
    Ok(())
}

fn run_evaluate(args: EvaluateArgs) -> anyhow::Result<()> {
    let dataset = load_validated(&args.input)?;
    let dataset = match &args.cohort {
        Some(cohort) => dataset.filtered(None, Some(cohort)),
        None => dataset,
    };
    let artifacts = load_artifacts(&args.artifacts)?;
    let cfg = BootstrapConfig {
        replicates: args.replicates,
        seed: args.seed,
        unit: args.unit,
        ..Default::default()
    };
    let report = build_performance_report(&dataset, &artifacts, &cfg, args.threshold_mode)?;

    let excluded: u32 = report
        .rows
        .iter()
        .filter_map(|r| r.metrics.as_ref())
        .map(|m| m.auc.excluded_replicates)
        .max()
        .unwrap_or(0);
    if f64::from(excluded) > EXCLUSION_WARN_FRACTION * f64::from(cfg.replicates) {
        eprintln!(
            "warning: {excluded} of {} bootstrap replicates excluded in at least one row",
            cfg.replicates
        );
    }

    let bytes = report.to_json_bytes();
    if let Some(out) = &args.out {
        write_output(out, &bytes)?;
    }
    if let Some(out) = &args.confusion_out {
        let confusion = build_confusion_report(&dataset, &artifacts, args.threshold_mode)?;
        write_output(out, &confusion.to_json_bytes())?;
    }
    if args.json {
        std::io::stdout().write_all(&bytes)?;
    } else {
        print!("{}", report.render_text(cfg.confidence));
    }
    Ok(())
}

fn run_screen(args: ScreenArgs) -> anyhow::Result<()> {
    let dataset = load_validated(&args.input)?;
    let artifacts = load_artifacts(&args.artifacts)?;
    let artifact = artifacts
        .iter()
        .find(|a| a.level == Level::Subject && a.strategy == Some(args.strategy))
        .ok_or_else(|| {
            anyhow!("no calibration artifact loaded for level `subject` strategy `{}`", args.strategy)
        })?;

    let groups = dataset.partition_and_group(None, None);
    let scores = aggregate_dataset(&groups, args.strategy)?;
    let decisions: Vec<serde_json::Value> = scores
        .iter()
        .map(|s| {
            let positive = args.threshold_mode.is_positive(s.score, artifact.threshold);
            serde_json::json!({
                "subject_id": s.subject_id,
                "subject_score": s.score,
                "decision": if positive { "positive" } else { "negative" },
                "threshold": artifact.threshold,
                "strategy": args.strategy.as_str(),
            })
        })
        .collect();

    let payload = if args.json {
        let mut s = serde_json::to_string_pretty(&decisions)?;
        s.push('\n');
        s
    } else {
        let mut csv = String::from("subject_id,score,decision\n");
        for d in &decisions {
            csv.push_str(&format!(
                "{},{},{}\n",
                d["subject_id"].as_str().unwrap(),
                d["subject_score"],
                d["decision"].as_str().unwrap(),
            ));
        }
        csv
    };
    match &args.out {
        Some(out) => write_output(out, payload.as_bytes())?,
        None => print!("{payload}"),
    }
    if args.out.is_some() && !args.json {
        println!("screened {} subjects with {}", decisions.len(), artifact.key());
    }
    Ok(())
}

fn run_simulate(args: SimulateArgs) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("failed to read {}", args.config.display()))?;
    let mut cfg = SimConfig::from_json_str(&text)
        .with_context(|| format!("invalid simulation config {}", args.config.display()))?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let dataset = simulate_cohort(&cfg)?;
    match &args.out {
        Some(out) => {
            let payload = match Format::from_path(out) {
                Format::Csv => dataset.to_csv_string()?,
                Format::Json => dataset.to_json_string()?,
            };
            write_output(out, payload.as_bytes())?;
            eprintln!(
                "simulated {} records for {} subjects (seed {})",
                dataset.records.len(),
                cfg.total_subjects(),
                cfg.seed
            );
        }
        None => print!("{}", dataset.to_csv_string()?),
    }
    Ok(())
}

fn run_roc(args: RocArgs) -> anyhow::Result<()> {
    let dataset = load_validated(&args.input)?;
    let export = export_roc(&dataset, args.level, args.strategy, args.cohort.as_deref())?;
    write_output(&args.out, export.csv.as_bytes())?;
    if let Some(svg) = &args.svg {
        write_output(svg, export.svg.as_bytes())?;
    }
    if args.json {
        println!(
            "{}",
            serde_json::json!({ "auc": export.curve.auc, "points": export.curve.points.len() })
        );
    } else {
        println!(
            "wrote {} ({} operating points, AUC {:.3})",
            args.out.display(),
            export.curve.points.len(),
            export.curve.auc
        );
    }
    Ok(())
}

fn run_serve(args: ServeArgs) -> anyhow::Result<()> {
    let artifacts = load_artifacts(&args.artifacts)?;
    let config = ServiceConfig {
        artifacts,
        mode: args.threshold_mode,
        max_body_bytes: args.max_body_bytes,
        max_replicates: args.max_replicates,
    };
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(args.listen).await?;
        eprintln!("listening on {}", listener.local_addr()?);
        screeneval_service::serve_on(config, listener).await
    })?;
    Ok(())
}
