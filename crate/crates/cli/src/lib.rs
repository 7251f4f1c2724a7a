//! Command-line driver: simulations, beta sweeps, single-round solves,
//! property checks and the worked-example demo.

pub mod config;
pub mod csv_out;
pub mod demo;

use clap::{Parser, Subcommand};
use config::CliConfig;
use csv_out::{write_csv, SeriesRows};
use dpbalance_core::econ::Regime;
use dpbalance_core::schedulers::Scheduler;
use dpbalance_core::sim::{run, sweep_beta};
use dpbalance_core::solver::solve_subproblem1;
use dpbalance_core::{DemandFile, FairnessParams, ShareVector};
use serde::Serialize;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "dpbalance", version, about = "Fair privacy budget scheduling for federated learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a simulation and write per-round metrics as CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        scheduler: Option<Scheduler>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        rounds: Option<u64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every scheduler on the two-analyst example and check the goldens.
    DemoFig2 {
        #[arg(long, default_value_t = 2.2)]
        beta: f64,
    },
    /// Independent runs over several betas, one CSV.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true)]
        betas: Vec<f64>,
        #[arg(long)]
        scheduler: Option<Scheduler>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        rounds: Option<u64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Split the blocks of a demand file among its analysts.
    Solve {
        #[arg(long)]
        demands: PathBuf,
        #[arg(long, default_value_t = 2.2)]
        beta: f64,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, default_value_t = 0.0)]
        rho: f64,
        #[arg(long, default_value_t = 0)]
        round: u64,
    },
    /// Check an economic property on seeded instances and print a JSON report.
    Properties {
        #[arg(long)]
        regime: Regime,
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        beta: Option<f64>,
    },
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
        }
    }
}

type CmdResult = std::result::Result<(), CliError>;

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let sink: &mut dyn Write = if e.use_stderr() { stderr } else { stdout };
            let _ = sink.write_all(text.as_bytes());
            return code;
        }
    };
    match execute(cli.command, stdout, stderr) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}", e.message());
            e.code()
        }
    }
}

pub fn execute(command: Command, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CmdResult {
    match command {
        Command::Simulate {
            config,
            scheduler,
            seed,
            rounds,
            beta,
            lambda,
            out,
        } => {
            let mut cfg = CliConfig::load(&config).map_err(usage)?;
            apply_overrides(&mut cfg, scheduler, seed, rounds, beta, lambda, out);
            cmd_simulate(&cfg, stdout, stderr)
        }
        Command::DemoFig2 { beta } => cmd_demo_fig2(beta, stdout),
        Command::Sweep {
            config,
            betas,
            scheduler,
            seed,
            rounds,
            jobs,
            out,
        } => {
            let mut cfg = match config {
                Some(path) => CliConfig::load(&path).map_err(usage)?,
                None => CliConfig::default(),
            };
            apply_overrides(&mut cfg, scheduler, seed, rounds, None, None, out);
            cmd_sweep(&cfg, &betas, jobs, stdout)
        }
        Command::Solve {
            demands,
            beta,
            lambda,
            rho,
            round,
        } => cmd_solve(&demands, beta, lambda, rho, round, stdout),
        Command::Properties {
            regime,
            instances,
            seed,
            beta,
        } => cmd_properties(regime, instances, seed, beta, stdout),
    }
}

fn apply_overrides(
    cfg: &mut CliConfig,
    scheduler: Option<Scheduler>,
    seed: Option<u64>,
    rounds: Option<u64>,
    beta: Option<f64>,
    lambda: Option<f64>,
    out: Option<PathBuf>,
) {
    if let Some(s) = scheduler {
        cfg.scheduler = s;
    }
    if seed.is_some() {
        cfg.seed = seed;
    }
    if let Some(r) = rounds {
        cfg.rounds = r;
    }
    if let Some(b) = beta {
        cfg.beta = b;
        cfg.lambda = lambda;
    } else if lambda.is_some() {
        cfg.lambda = lambda;
    }
    if out.is_some() {
        cfg.out = out;
    }
}

fn emit_csv(path: Option<&Path>, rows: &[SeriesRows<'_>], stdout: &mut dyn Write) -> CmdResult {
    match path {
        Some(p) => {
            let file = std::fs::File::create(p).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
            write_csv(std::io::BufWriter::new(file), rows).map_err(runtime)
        }
        None => write_csv(stdout, rows).map_err(runtime),
    }
}

pub fn cmd_simulate(cfg: &CliConfig, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CmdResult {
    cfg.validate().map_err(usage)?;
    let sim = cfg.sim_config().map_err(usage)?;
    let series = run(&sim, cfg.rounds).map_err(runtime)?;
    emit_csv(
        cfg.out.as_deref(),
        &[SeriesRows {
            scheduler: sim.scheduler,
            params: sim.params,
            series: &series,
        }],
        stdout,
    )?;
    let last = series.last().expect("at least one round");
    let summary: &mut dyn Write = if cfg.out.is_some() { stdout } else { stderr };
    writeln!(
        summary,
        "{} beta={} rounds={}: cumulative efficiency {:.6}, cumulative fairness {:.6}",
        sim.scheduler,
        sim.params.beta,
        cfg.rounds,
        last.cumulative_efficiency,
        last.cumulative_fairness
    )
    .map_err(runtime)
}

pub fn cmd_sweep(cfg: &CliConfig, betas: &[f64], jobs: usize, stdout: &mut dyn Write) -> CmdResult {
    cfg.validate().map_err(usage)?;
    if jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    let params: Vec<FairnessParams> = betas
        .iter()
        .map(|&b| FairnessParams::new(b, None, cfg.rho))
        .collect::<dpbalance_core::Result<_>>()
        .map_err(usage)?;
    let sim = cfg.sim_config().map_err(usage)?;
    let results = sweep_beta(&sim, betas, cfg.rounds, jobs).map_err(runtime)?;
    let rows: Vec<SeriesRows<'_>> = results
        .iter()
        .zip(params)
        .map(|((_, series), params)| SeriesRows {
            scheduler: sim.scheduler,
            params,
            series,
        })
        .collect();
    emit_csv(cfg.out.as_deref(), &rows, stdout)
}

#[derive(Serialize)]
struct SolvedAnalyst {
    id: String,
    x: f64,
    shares: ShareVector,
}

#[derive(Serialize)]
struct SolveOutput {
    beta: f64,
    lambda: f64,
    analysts: Vec<SolvedAnalyst>,
    multipliers: ShareVector,
    residual: f64,
}

pub fn cmd_solve(
    demands: &Path,
    beta: f64,
    lambda: Option<f64>,
    rho: f64,
    round: u64,
    stdout: &mut dyn Write,
) -> CmdResult {
    let text = std::fs::read_to_string(demands).map_err(|e| usage(format!("{}: {e}", demands.display())))?;
    let file = DemandFile::from_json(&text).map_err(|e| usage(format!("{}: {e}", demands.display())))?;
    let params = FairnessParams::new(beta, lambda, rho).map_err(usage)?;
    let analysts = file.aggregate(round).map_err(usage)?;
    let caps = file.ledger().blocks.keys().map(|k| (k.clone(), 1.0)).collect();
    let alloc = solve_subproblem1(&analysts, &params, &caps).map_err(runtime)?;
    let out = SolveOutput {
        beta: params.beta,
        lambda: params.lambda,
        analysts: analysts
            .iter()
            .zip(alloc.x.iter().zip(alloc.shares))
            .map(|(a, (&x, shares))| SolvedAnalyst {
                id: a.analyst_id.to_string(),
                x,
                shares,
            })
            .collect(),
        multipliers: alloc.multipliers,
        residual: alloc.residual,
    };
    let text = serde_json::to_string_pretty(&out).map_err(runtime)?;
    writeln!(stdout, "{text}").map_err(runtime)
}

pub fn cmd_properties(
    regime: Regime,
    instances: usize,
    seed: u64,
    beta: Option<f64>,
    stdout: &mut dyn Write,
) -> CmdResult {
    if let Some(b) = beta {
        regime.params(b).map_err(usage)?;
    }
    let report = regime.run(beta, instances, seed).map_err(runtime)?;
    let text = serde_json::to_string_pretty(&report).map_err(runtime)?;
    writeln!(stdout, "{text}").map_err(runtime)
}

pub fn cmd_demo_fig2(beta: f64, stdout: &mut dyn Write) -> CmdResult {
    let params = FairnessParams::alpha_fair(beta).map_err(usage)?;
    let outcome = demo::demo_fig2(&params).map_err(runtime)?;
    stdout.write_all(outcome.report.as_bytes()).map_err(runtime)?;
    if outcome.passed() {
        writeln!(stdout, "all goldens match").map_err(runtime)
    } else {
        Err(CliError::Runtime(format!(
            "golden mismatch:\n  {}",
            outcome.mismatches.join("\n  ")
        )))
    }
}
