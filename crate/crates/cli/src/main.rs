use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qarima::error::Result;
use qarima::pipeline::{self, RunConfig};

#[derive(Parser)]
#[command(name = "qarima", version, about = "Quantum-inspired ARIMA order discovery and estimation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the full pipeline and write reports.
    Run(RunArgs),
    /// Differencing order and QACF/QPACF only.
    Diagnose(RunArgs),
    /// Metrics and DM tests from a stored forecasts.csv.
    Evaluate {
        #[arg(long)]
        forecasts: PathBuf,
        /// Takes the evaluation protocol from this config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Rewrite report CSVs from a manifest.
    Report {
        #[arg(long)]
        manifest: PathBuf,
        /// Defaults to the manifest's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Shot count, or `analytic` for exact probabilities.
    #[arg(long, value_parser = parse_shots)]
    shots: Option<u64>,
    /// Worker threads; 0 uses all cores.
    #[arg(long)]
    jobs: Option<usize>,
}

fn parse_shots(s: &str) -> std::result::Result<u64, String> {
    if s.eq_ignore_ascii_case("analytic") {
        return Ok(0);
    }
    s.parse::<u64>().map_err(|_| format!("expected a shot count or `analytic`, got {s:?}"))
}

fn load_config(a: &RunArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::from_file(&a.config)?;
    if let Some(o) = &a.out {
        cfg.run.out = o.clone();
    }
    if let Some(s) = a.seed {
        cfg.run.seed = s;
    }
    if let Some(s) = a.shots {
        cfg.run.shots = s;
    }
    Ok(cfg)
}

fn summarize(m: &pipeline::RunManifest) {
    if let Some(d) = &m.diagnostics {
        println!("d* = {}", d.d_order.d_star);
        println!("QPACF lags: {:?}", d.qpacf.selected());
    }
    if let Some(ev) = &m.evaluation {
        for r in &ev.reports {
            println!("{:<24} N={:<4} MSE={:<12.4} MAPE={:.4}", r.label, r.n, r.mse, r.mape);
        }
        for w in &ev.warnings {
            println!("warning: {w}");
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Run(a) => {
            let cfg = load_config(&a)?;
            let m = qarima::par::with_jobs(a.jobs, || pipeline::run_pipeline(&cfg))?;
            summarize(&m);
            println!("reports written to {}", cfg.run.out.display());
        }
        Cmd::Diagnose(a) => {
            let cfg = load_config(&a)?;
            let m = qarima::par::with_jobs(a.jobs, || pipeline::run_diagnostics(&cfg))?;
            summarize(&m);
        }
        Cmd::Evaluate { forecasts, config, out } => {
            let proto = match config {
                Some(c) => RunConfig::from_file(c)?.eval,
                None => Default::default(),
            };
            let ev = pipeline::evaluate_stored(&forecasts, &proto, &out)?;
            for r in &ev.reports {
                println!("{:<24} N={:<4} MSE={:<12.4} MAPE={:.4}", r.label, r.n, r.mse, r.mape);
            }
        }
        Cmd::Report { manifest, out } => {
            let m = pipeline::load_manifest(&manifest)?;
            let dir = out.unwrap_or_else(|| manifest.parent().map(PathBuf::from).unwrap_or_default());
            let files = pipeline::emit_reports(&m, &dir)?;
            pipeline::emit_plot_data(&m, &dir)?;
            println!("{} report files written to {}", files.len() + 2, dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
