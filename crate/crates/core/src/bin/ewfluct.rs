use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use ewfluct::harness::{parse_config, run_experiment, ExperimentKind};
use ewfluct::Error;

/// Run one experiment of the transport-noise fluctuation laboratory.
#[derive(Parser, Debug)]
#[command(name = "ewfluct", version)]
struct Cli {
    /// mean, scaling, qv, clt, corrpde, stationary or msd
    experiment: String,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicas: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Validate and print the resolved configuration.
    #[arg(long)]
    dry_run: bool,
}

fn is_config_error(e: &Error) -> bool {
    matches!(
        e,
        Error::UnknownKey(_)
            | Error::MissingSection(_)
            | Error::ConstraintViolation(_)
            | Error::Config(_)
            | Error::ConfigErrors(_)
    )
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let usage = |msg: String| {
        eprintln!("error: {msg}");
        ExitCode::from(2)
    };
    let kind: ExperimentKind = match cli.experiment.parse() {
        Ok(k) => k,
        Err(e) => return usage(e.to_string()),
    };
    let text = match std::fs::read_to_string(&cli.config) {
        Ok(t) => t,
        Err(e) => return usage(format!("{}: {e}", cli.config.display())),
    };
    let mut cfg = match parse_config(&text) {
        Ok(c) => c,
        Err(e) => return usage(e.to_string()),
    };
    cfg.experiment.name = kind;
    if let Some(s) = cli.seed {
        cfg.statistics.seed = s;
    }
    if let Some(r) = cli.replicas {
        cfg.statistics.replicas = r;
    }
    if let Some(o) = &cli.out {
        cfg.output.dir = o.to_string_lossy().into_owned();
    }
    if let Err(e) = cfg.validate() {
        return usage(e.to_string());
    }
    if cli.dry_run {
        println!("# config hash {}", cfg.hash());
        print!("{}", cfg.to_toml());
        return ExitCode::SUCCESS;
    }
    match run_experiment(&cfg, cli.workers) {
        Ok(report) => {
            print!("{}", report.summary());
            println!("artifacts in {}", cfg.output.dir);
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) if is_config_error(&e) => usage(e.to_string()),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
