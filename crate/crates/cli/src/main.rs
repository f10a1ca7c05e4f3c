use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use catrelax::harness::{
    default_workers, emit_density_figure_data, run_audit_suite, run_gradient_checks, run_grid_with,
    run_speed_benchmark, variance_comparison, ExperimentConfig, Task,
};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "catrelax", version, about = "Gumbel-Softmax audits and desk-scale experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Bias and variance audits of the gradient estimators on enumeration testbeds.
    Audit(Common),
    /// Gumbel-Softmax density grid and sample means per temperature.
    Density(Common),
    /// Autodiff against central finite differences.
    GradCheck(Common),
    /// Structured-output SBN grid.
    TrainSbn(Common),
    /// Discrete-latent VAE grid.
    TrainVae(Common),
    /// Semi-supervised VAE grid.
    TrainSsvae(Common),
    /// Steps per second of marginalization against single-sample training.
    Speed(Common),
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; task defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Width multiplier; overrides the config's `scale`.
    #[arg(long)]
    scale: Option<f64>,
    /// Worker threads for grid runs.
    #[arg(long)]
    workers: Option<usize>,
}

struct Failure {
    kind: String,
    message: String,
    code: u8,
}

impl From<catrelax::Error> for Failure {
    fn from(e: catrelax::Error) -> Self {
        Failure {
            kind: e.kind().to_string(),
            message: e.to_string(),
            code: 2,
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        catrelax::Error::from(e).into()
    }
}

fn checks_failed(what: &str, names: Vec<String>) -> Failure {
    Failure {
        kind: "check_failed".into(),
        message: format!("{what} failed: {}", names.join(", ")),
        code: 1,
    }
}

fn load_config(task: Task, common: &Common) -> Result<ExperimentConfig, Failure> {
    let mut config = match &common.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::new(task),
    };
    if config.task != task {
        return Err(catrelax::Error::Config(format!(
            "config is for task `{}`, command runs `{task}`",
            config.task
        ))
        .into());
    }
    if let Some(s) = common.scale {
        config.scale = s;
    }
    config.validate()?;
    Ok(config)
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> Result<(), Failure> {
    fs::write(path, serde_json::to_string_pretty(v).map_err(catrelax::Error::from)?)?;
    Ok(())
}

fn audit(c: &Common) -> Result<Value, Failure> {
    let config = load_config(Task::Audit, c)?;
    fs::create_dir_all(&c.out)?;
    let outcomes = run_audit_suite(config.audit.trials, c.seed)?;
    let variance = variance_comparison(config.audit.trials, c.seed)?;
    write_json(&c.out.join("audit.json"), &json!({ "audits": outcomes, "variance": variance }))?;
    let mut csv = String::from("label,expect,max_abs_z,z_critical,total_variance,passed\n");
    for o in &outcomes {
        let _ = writeln!(
            csv,
            "{},{:?},{},{},{},{}",
            o.label,
            o.expect,
            o.audit.max_abs_z(),
            o.audit.z_critical,
            o.audit.total_variance(),
            o.passed
        );
    }
    fs::write(c.out.join("audit.csv"), csv)?;
    let mut failed: Vec<String> = outcomes.iter().filter(|o| !o.passed).map(|o| o.label.clone()).collect();
    if !variance.gs_lower() {
        failed.push("gs_variance_below_sf".into());
    }
    if !failed.is_empty() {
        return Err(checks_failed("audit", failed));
    }
    Ok(json!({
        "audits": outcomes.len(),
        "gs_variance": variance.gs.total_variance(),
        "sf_variance": variance.sf.total_variance(),
    }))
}

fn density(c: &Common) -> Result<Value, Failure> {
    let config = load_config(Task::Density, c)?;
    let fig = emit_density_figure_data(&config.density, c.seed)?;
    fig.write(&c.out)?;
    Ok(json!({ "grid_rows": fig.grid.len(), "taus": config.density.taus }))
}

fn grad_check(c: &Common) -> Result<Value, Failure> {
    let checks = run_gradient_checks(c.seed)?;
    fs::create_dir_all(&c.out)?;
    write_json(&c.out.join("gradcheck.json"), &checks)?;
    let failed: Vec<String> = checks.iter().filter(|g| !g.passed).map(|g| g.name.clone()).collect();
    if !failed.is_empty() {
        return Err(checks_failed("gradient check", failed));
    }
    let worst = checks.iter().map(|g| g.max_relative_error).fold(0.0, f64::max);
    Ok(json!({ "checks": checks.len(), "max_relative_error": worst }))
}

fn train(task: Task, c: &Common) -> Result<Value, Failure> {
    let config = load_config(task, c)?;
    let workers = c.workers.unwrap_or_else(default_workers);
    let report = run_grid_with(&config, c.seed, workers, |r| {
        eprintln!("{}: {:?}", r.cell_id, r.status);
    })?;
    report.write(&config, &c.out)?;
    let failed = report.records.iter().filter(|r| !r.completed()).count();
    Ok(json!({
        "cells": report.records.len(),
        "failed_cells": failed,
        "config_hash": report.config_hash,
        "selections": report.selections,
    }))
}

fn speed(c: &Common) -> Result<Value, Failure> {
    let config = load_config(Task::Speed, c)?;
    let report = run_speed_benchmark(&config, c.seed)?;
    report.write(&c.out)?;
    Ok(json!({ "speedups": report.speedups.iter().map(|s| (s.k, s.measured)).collect::<Vec<_>>() }))
}

fn run(cli: Cli) -> Result<Value, Failure> {
    match &cli.command {
        Command::Audit(c) => audit(c),
        Command::Density(c) => density(c),
        Command::GradCheck(c) => grad_check(c),
        Command::TrainSbn(c) => train(Task::Sbn, c),
        Command::TrainVae(c) => train(Task::Vae, c),
        Command::TrainSsvae(c) => train(Task::Ssvae, c),
        Command::Speed(c) => speed(c),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let msg = e.render().to_string();
            eprintln!("{}", json!({ "error": "usage", "message": msg.trim() }));
            return ExitCode::from(2);
        }
    };
    let out = match &cli.command {
        Command::Audit(c)
        | Command::Density(c)
        | Command::GradCheck(c)
        | Command::TrainSbn(c)
        | Command::TrainVae(c)
        | Command::TrainSsvae(c)
        | Command::Speed(c) => c.out.display().to_string(),
    };
    match run(cli) {
        Ok(mut summary) => {
            summary["status"] = json!("ok");
            summary["out"] = json!(out);
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("{}", json!({ "error": f.kind, "message": f.message }));
            ExitCode::from(f.code)
        }
    }
}
