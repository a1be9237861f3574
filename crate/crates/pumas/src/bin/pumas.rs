//! Experiment driver: level sweep with configurable preconditioning, table
//! output, and optional per-solve trace.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use pumas::experiment::{
    emit_table, parse_config_file, parse_format, parse_overlap, parse_precond, run_experiment,
    ConfigOverrides, ExperimentConfig, Format, PrecondMode,
};
use pumas::schwarz::Overlap;

#[derive(Parser)]
#[command(
    name = "pumas",
    about = "Constrained optimal-control solver on flat-top partition of unity spaces",
    version
)]
struct Cli {
    /// Config file with line-oriented key = value settings.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Coarsest level of the sweep.
    #[arg(long, value_name = "L")]
    level_min: Option<u32>,

    /// Finest level of the sweep.
    #[arg(long, value_name = "L")]
    level_max: Option<u32>,

    /// Subdomain counts, e.g. 4,16,64. Each must be a perfect square.
    #[arg(long, value_name = "J[,J...]", value_delimiter = ',')]
    subdomains: Option<Vec<u32>>,

    /// Overlap width: small (one patch) or generous (one block).
    #[arg(long, value_name = "MODE", value_parser = cli_overlap)]
    overlap: Option<Overlap>,

    /// Preconditioner: none, one-level or two-level.
    #[arg(long, value_name = "MODE", value_parser = cli_precond)]
    precond: Option<PrecondMode>,

    /// Regularization weight β.
    #[arg(long, value_name = "BETA")]
    beta: Option<f64>,

    /// Obstacle as an expression in x1, x2.
    #[arg(long, value_name = "EXPR")]
    psi: Option<String>,

    /// Active-set weight c.
    #[arg(long, value_name = "C")]
    c: Option<f64>,

    /// Relative solver tolerance.
    #[arg(long, value_name = "TOL")]
    tol: Option<f64>,

    /// Output format: csv or markdown.
    #[arg(long, value_name = "FMT", value_parser = cli_format)]
    format: Option<Format>,

    /// Force sequential subdomain solves.
    #[arg(long)]
    deterministic: bool,

    /// Worker threads for subdomain solves (0 = all cores).
    #[arg(long, value_name = "N")]
    threads: Option<usize>,

    /// Inner iteration cap (default 20 × unknowns).
    #[arg(long, value_name = "N")]
    max_iter: Option<usize>,

    /// Write one line per inner solve to this file.
    #[arg(long, value_name = "PATH")]
    trace: Option<PathBuf>,
}

fn cli_overlap(s: &str) -> Result<Overlap, String> {
    parse_overlap(s).ok_or_else(|| format!("'{s}' is not small or generous"))
}

fn cli_precond(s: &str) -> Result<PrecondMode, String> {
    parse_precond(s).ok_or_else(|| format!("'{s}' is not none, one-level or two-level"))
}

fn cli_format(s: &str) -> Result<Format, String> {
    parse_format(s).ok_or_else(|| format!("'{s}' is not csv or markdown"))
}

fn build_config(cli: &Cli) -> pumas::Result<ExperimentConfig> {
    let mut config = ExperimentConfig::default();
    if let Some(path) = &cli.config {
        parse_config_file(path)?.apply(&mut config);
    }
    let psi = match &cli.psi {
        Some(text) => Some(pumas::expr::Expr::parse(text)?),
        None => None,
    };
    let flags = ConfigOverrides {
        domain: None,
        beta: cli.beta,
        c: cli.c,
        tol: cli.tol,
        f: None,
        psi,
        level_min: cli.level_min,
        level_max: cli.level_max,
        subdomains: cli.subdomains.clone(),
        overlap: cli.overlap,
        precond: cli.precond,
        format: cli.format,
        deterministic: cli.deterministic.then_some(true),
        threads: cli.threads,
        max_iter: cli.max_iter,
        trace: cli.trace.clone(),
    };
    flags.apply(&mut config);
    Ok(config)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // Exit 2 is reserved for completed sweeps with DNC cells; route usage
    // errors to 1 alongside config-file errors. Help and version stay 0.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let failed = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if failed { 1 } else { 0 });
        }
    };
    let config = match build_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if config.threads > 0 {
        if let Err(e) =
            rayon::ThreadPoolBuilder::new().num_threads(config.threads).build_global()
        {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match run_experiment(&config) {
        Ok(outcome) => {
            print!("{}", emit_table(&outcome.reports, config.format));
            if outcome.any_dnc() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
