//! `geoshare`: train toy models, share their layers, run oracles and sweeps.
//!
//! Every subcommand writes JSON into `--out`; wall times go to a separate
//! `timing.json` so that the other files are byte-identical across runs with
//! the same config and seed.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use geoshare::aligner::AlignMode;
use geoshare::harness::{
    ablate, json_hash, prepare, run_experiment, run_oracles, AblationTable, ExperimentConfig, MethodResult,
    RunReport, Sweep, TrainingSummary,
};
use geoshare::net::checkpoint;
use geoshare::BasisId;

#[derive(Debug, Parser)]
#[command(name = "geoshare", version, about = "Curvature-aligned cross-layer parameter sharing on toy models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate data, train the model and save a checkpoint.
    Train(Common),
    /// Train, then share with Geo-Sharing and every configured baseline.
    Share(Common),
    /// Check HVPs, eigensolvers, selection and projections against brute force.
    Oracle(Common),
    /// Train once, then run the configured t and beta sweeps.
    Ablate(Common),
    /// Everything `share` does plus the sweeps, in one report.
    Report(Common),
}

#[derive(Debug, clap::Args)]
struct Common {
    /// Experiment config (JSON); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; falls back to the config's `output_dir`, then `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config's run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the sharing mode (the sweep mode for `ablate`).
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Also write flat CSV tables.
    #[arg(long)]
    csv: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    PaperLiteral,
    StrictSharing,
}

impl From<Mode> for AlignMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::PaperLiteral => AlignMode::PaperLiteral,
            Mode::StrictSharing => AlignMode::StrictSharing,
        }
    }
}

/// Exits with status 2; every other error exits with 1.
#[derive(Debug)]
struct OracleFailed;

impl std::fmt::Display for OracleFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("at least one oracle suite failed")
    }
}

impl std::error::Error for OracleFailed {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<OracleFailed>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(c) => cmd_train(&c),
        Command::Share(c) => cmd_share(&c, false),
        Command::Oracle(c) => cmd_oracle(&c),
        Command::Ablate(c) => cmd_ablate(&c),
        Command::Report(c) => cmd_share(&c, true),
    }
}

struct Run {
    config: ExperimentConfig,
    out: PathBuf,
    csv: bool,
}

fn setup(c: &Common, sweep_mode: bool) -> Result<Run> {
    let mut config = match &c.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ExperimentConfig::from_json(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = c.seed {
        config.seed = seed;
    }
    if let Some(mode) = c.mode {
        if sweep_mode {
            config.ablation.mode = mode.into();
        } else {
            config.sharing.align.mode = mode.into();
        }
    }
    config.validate()?;
    let out = c
        .out
        .clone()
        .or_else(|| config.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    Ok(Run {
        config,
        out,
        csv: c.csv,
    })
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn write_csv<T: Serialize>(dir: &Path, name: &str, rows: &[T]) -> Result<()> {
    let path = dir.join(name);
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn coloring_text(c: &[BasisId]) -> String {
    c.iter().map(|b| b.0.to_string()).collect::<Vec<_>>().join("-")
}

#[derive(Serialize)]
struct TrainReport {
    schema_version: u32,
    config: ExperimentConfig,
    training: TrainingSummary,
    train_hash: String,
    eval_hash: String,
    params_hash: String,
    checkpoint: String,
}

#[derive(Serialize)]
struct Timing {
    command: &'static str,
    total_seconds: f64,
    #[serde(flatten)]
    detail: serde_json::Value,
}

fn write_timing(dir: &Path, command: &'static str, clock: Instant, detail: serde_json::Value) -> Result<()> {
    write_json(
        dir,
        "timing.json",
        &Timing {
            command,
            total_seconds: clock.elapsed().as_secs_f64(),
            detail,
        },
    )
}

fn cmd_train(c: &Common) -> Result<()> {
    let clock = Instant::now();
    let run = setup(c, false)?;
    let prep = prepare(&run.config)?;
    checkpoint::save(&run.out.join("checkpoint"), &prep.spec, &prep.params, run.config.seed)?;
    let report = TrainReport {
        schema_version: geoshare::harness::SCHEMA_VERSION,
        config: run.config.clone(),
        training: prep.training.clone(),
        train_hash: json_hash(&prep.data.train)?,
        eval_hash: json_hash(&prep.data.eval)?,
        params_hash: json_hash(&prep.params)?,
        checkpoint: "checkpoint".into(),
    };
    write_json(&run.out, "train.json", &report)?;
    if run.csv {
        write_csv(&run.out, "trace.csv", &prep.training.trace)?;
    }
    write_timing(&run.out, "train", clock, serde_json::json!({ "train_seconds": prep.train_seconds }))?;
    println!(
        "trained {} steps, loss {:.6e}, gradient norm {:.3e}, converged: {}",
        prep.training.steps, prep.training.final_loss, prep.training.final_grad_norm, prep.training.converged
    );
    Ok(())
}

#[derive(Serialize)]
struct MethodRow<'a> {
    method: &'a str,
    loss_before: f64,
    loss_after: f64,
    delta_loss: f64,
    compression_ratio: Option<f64>,
    coloring: String,
    automorphism_order: Option<String>,
    surrogate_cost: f64,
    perp_energy: Option<f64>,
}

impl<'a> From<&'a MethodResult> for MethodRow<'a> {
    fn from(m: &'a MethodResult) -> Self {
        Self {
            method: &m.method,
            loss_before: m.loss_before,
            loss_after: m.loss_after,
            delta_loss: m.delta_loss,
            compression_ratio: m.compression_ratio,
            coloring: m.coloring.as_deref().map(coloring_text).unwrap_or_default(),
            automorphism_order: m.automorphism_order.map(|o| o.to_string()),
            surrogate_cost: m.surrogate_cost,
            perp_energy: m.perp_energy,
        }
    }
}

#[derive(Serialize)]
struct SweepRow {
    parameter: &'static str,
    mode: &'static str,
    value: f64,
    delta_loss: f64,
    loss_after: f64,
    surrogate_cost: f64,
    coloring: String,
}

fn sweep_rows(tables: &[AblationTable]) -> Vec<SweepRow> {
    tables
        .iter()
        .flat_map(|t| {
            t.rows.iter().map(move |r| SweepRow {
                parameter: match t.parameter {
                    Sweep::T => "t",
                    Sweep::Beta => "beta",
                },
                mode: t.mode.name(),
                value: r.value,
                delta_loss: r.delta_loss,
                loss_after: r.loss_after,
                surrogate_cost: r.surrogate_cost,
                coloring: coloring_text(&r.coloring),
            })
        })
        .collect()
}

fn print_methods(report: &RunReport) {
    for m in &report.methods {
        let ratio = m.compression_ratio.map(|r| format!("{r:.4}")).unwrap_or_else(|| "-".into());
        println!("{:<16} delta_loss {:+.6e}  ratio {ratio}", m.method, m.delta_loss);
    }
}

fn cmd_share(c: &Common, with_ablations: bool) -> Result<()> {
    let clock = Instant::now();
    let run = setup(c, false)?;
    let (report, timing) = run_experiment(&run.config, with_ablations)?;
    write_json(&run.out, "report.json", &report)?;
    if run.csv {
        let rows: Vec<MethodRow> = report.methods.iter().map(MethodRow::from).collect();
        write_csv(&run.out, "methods.csv", &rows)?;
        if with_ablations {
            write_csv(&run.out, "ablation.csv", &sweep_rows(&report.ablations))?;
        }
    }
    let name = if with_ablations { "report" } else { "share" };
    write_timing(&run.out, name, clock, serde_json::to_value(&timing)?)?;
    print_methods(&report);
    Ok(())
}

fn cmd_oracle(c: &Common) -> Result<()> {
    let clock = Instant::now();
    let run = setup(c, false)?;
    let report = run_oracles(&run.config)?;
    write_json(&run.out, "oracle.json", &report)?;
    if run.csv {
        write_csv(&run.out, "oracle.csv", &report.suites)?;
    }
    write_timing(&run.out, "oracle", clock, serde_json::json!({}))?;
    for s in &report.suites {
        let status = if s.passed { "PASS" } else { "FAIL" };
        println!("{status} {:<28} measured {:.3e} tolerance {:.1e}", s.name, s.measured, s.tolerance);
    }
    if report.passed {
        Ok(())
    } else {
        Err(OracleFailed.into())
    }
}

fn cmd_ablate(c: &Common) -> Result<()> {
    let clock = Instant::now();
    let run = setup(c, true)?;
    let spec = &run.config.ablation;
    if spec.t_values.is_empty() && spec.beta_values.is_empty() {
        bail!("configuration error: the ablation section lists no t or beta values");
    }
    let prep = prepare(&run.config)?;
    let mut tables = Vec::new();
    let mut seconds = serde_json::Map::new();
    for (sweep, name, values) in [
        (Sweep::T, "t", spec.t_values.iter().map(|&t| t as f64).collect::<Vec<_>>()),
        (Sweep::Beta, "beta", spec.beta_values.clone()),
    ] {
        if values.is_empty() {
            continue;
        }
        let (table, secs) = ablate(&prep, sweep, &values, spec.mode)?;
        seconds.insert(name.into(), serde_json::to_value(secs)?);
        tables.push(table);
    }
    #[derive(Serialize)]
    struct AblationReport<'a> {
        schema_version: u32,
        config: &'a ExperimentConfig,
        training: &'a TrainingSummary,
        tables: &'a [AblationTable],
    }
    write_json(
        &run.out,
        "ablation.json",
        &AblationReport {
            schema_version: geoshare::harness::SCHEMA_VERSION,
            config: &run.config,
            training: &prep.training,
            tables: &tables,
        },
    )?;
    let rows = sweep_rows(&tables);
    if run.csv {
        write_csv(&run.out, "ablation.csv", &rows)?;
    }
    write_timing(
        &run.out,
        "ablate",
        clock,
        serde_json::json!({ "train_seconds": prep.train_seconds, "sweep_seconds": seconds }),
    )?;
    for r in &rows {
        println!("{:<5} {:>10.3e}  delta_loss {:+.6e}  surrogate {:.6e}", r.parameter, r.value, r.delta_loss, r.surrogate_cost);
    }
    Ok(())
}
