use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rwdval_core::model::{write_labels, LabelSet};
use rwdval_core::pipeline::{
    build_reference, canonical_json, emit_report, run_loaded, run_pipeline, simulate, write_rendered, LoadedInputs, ReportFormat, RunConfig, SimulationConfig,
    ValidationReport,
};
use rwdval_core::reference::{find_disagreements, write_worklist, Comparator, ReferenceMode};

#[derive(Parser)]
#[command(name = "rwdval", version, about = "Validate model-extracted patient datasets")]
struct Cli {
    /// Run or simulation configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// structured, summary or both.
    #[arg(long, global = true, default_value = "both")]
    format: ReportFormat,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate every input file and write canonical copies.
    Ingest,
    /// Write the disagreement worklist and, when adjudication is complete,
    /// the reference standard.
    Refstd,
    /// Reference standard and variable-level metrics only.
    Metrics,
    /// Verification checks only.
    Checks,
    /// Replication analyses only.
    Replicate,
    /// Generate a synthetic cohort, label files and a matching run config.
    Simulate,
    /// Every pillar.
    Run,
    /// Re-render a structured report.
    Report {
        /// Structured report written by `run`.
        #[arg(long)]
        input: PathBuf,
    },
}

fn load_run_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli.config.as_deref().context("--config is required")?;
    let mut cfg = RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_label_file(dir: &Path, name: &str, labels: &LabelSet) -> Result<()> {
    let path = dir.join(name);
    let file = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    write_labels(std::io::BufWriter::new(file), labels)?;
    Ok(())
}

fn run_and_emit(cli: &Cli, cfg: &RunConfig) -> Result<i32> {
    let report: ValidationReport = run_pipeline(cfg)?;
    let written = emit_report(&report, &cli.out, cli.format)?;
    for p in &written {
        eprintln!("wrote {}", p.display());
    }
    for b in report.breaches() {
        eprintln!(
            "threshold breach: {}.{} {} {} (observed {:?})",
            b.variable, b.metric, b.kind, b.limit, b.observed
        );
    }
    Ok(report.exit_code())
}

fn ingest(cli: &Cli) -> Result<i32> {
    let cfg = load_run_config(cli)?;
    let inputs = LoadedInputs::load(&cfg)?;
    std::fs::create_dir_all(&cli.out)?;
    let mut counts = BTreeMap::new();
    let sets = [
        ("llm", Some(&inputs.llm)),
        ("abstractor_1", inputs.abstractor_1.as_ref()),
        ("abstractor_2", inputs.abstractor_2.as_ref()),
        ("previous", inputs.previous.as_ref()),
    ];
    for (role, set) in sets {
        if let Some(set) = set {
            write_label_file(&cli.out, &format!("{role}.csv"), set)?;
            counts.insert(role, serde_json::json!({"records": set.len(), "patients": set.patients().len()}));
        }
    }
    let summary = serde_json::json!({
        "labels": counts,
        "attributes": inputs.attributes.len(),
        "variables": inputs.schema.len(),
        "sha256": inputs.hashes,
    });
    write_text(&cli.out.join("ingest.json"), &canonical_json(&summary))?;
    eprintln!("ingested {} label set(s) into {}", counts.len(), cli.out.display());
    Ok(0)
}

fn refstd(cli: &Cli) -> Result<i32> {
    let mut cfg = load_run_config(cli)?;
    let inputs = LoadedInputs::load(&cfg)?;
    std::fs::create_dir_all(&cli.out)?;
    let comparator = Comparator::new(cfg.default_tolerance_days);
    let cases = match cfg.reference.mode {
        ReferenceMode::DuplicateAbstraction => Vec::new(),
        ReferenceMode::DoubleAdjudication => find_disagreements(
            &inputs.llm,
            inputs.abstractor_1.as_ref().context("abstractor_1 missing")?,
            None,
            &inputs.schema,
            &comparator,
        ),
        ReferenceMode::TripleAdjudication => find_disagreements(
            &inputs.llm,
            inputs.abstractor_1.as_ref().context("abstractor_1 missing")?,
            inputs.abstractor_2.as_ref(),
            &inputs.schema,
            &comparator,
        ),
    };
    let worklist = cli.out.join("worklist.csv");
    write_worklist(std::fs::File::create(&worklist)?, &cases)?;
    eprintln!("wrote {} ({} case(s))", worklist.display(), cases.len());

    if let Ok(reference) = build_reference(&cfg, &inputs) {
        write_label_file(&cli.out, "reference.csv", &reference.labels)?;
    }
    cfg.metrics.enabled = false;
    cfg.checks.enabled = false;
    cfg.replication.enabled = false;
    let report = run_loaded(&cfg, &inputs);
    emit_report(&report, &cli.out, cli.format)?;
    Ok(report.exit_code())
}

fn only(cli: &Cli, metrics: bool, checks: bool, replication: bool) -> Result<i32> {
    let mut cfg = load_run_config(cli)?;
    cfg.metrics.enabled &= metrics;
    cfg.checks.enabled &= checks;
    cfg.replication.enabled &= replication;
    run_and_emit(cli, &cfg)
}

fn simulate_cmd(cli: &Cli) -> Result<i32> {
    let mut cfg = match &cli.config {
        Some(p) => SimulationConfig::from_toml_str(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => SimulationConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.generator.seed = seed;
    }
    let written = simulate(&cfg, &cli.out)?;
    eprintln!("wrote {} file(s) to {}", written.len(), cli.out.display());
    Ok(0)
}

fn report_cmd(cli: &Cli, input: &Path) -> Result<i32> {
    let text = std::fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let report: serde_json::Value = serde_json::from_str(&text).context("parsing structured report")?;
    if !report.get("meta").is_some_and(|m| m.is_object()) {
        bail!("{} is not a validation report", input.display());
    }
    write_rendered(&report, &cli.out, cli.format)?;
    Ok(0)
}

fn dispatch(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Ingest => ingest(cli),
        Command::Refstd => refstd(cli),
        Command::Metrics => only(cli, true, false, false),
        Command::Checks => only(cli, false, true, false),
        Command::Replicate => only(cli, false, false, true),
        Command::Simulate => simulate_cmd(cli),
        Command::Run => run_and_emit(cli, &load_run_config(cli)?),
        Command::Report { input } => report_cmd(cli, input),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
