//! `embedlab`: run embedding experiments from a config file.

mod config;
mod output;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{ExperimentConfig, Model};
use output::{OutputDir, Status};
use stages::RunOptions;

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_ENGINE: u8 = 3;

#[derive(Parser)]
#[command(name = "embedlab", about = "Embedded-payoff experiments for European value surfaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline described by a TOML config.
    Run {
        config: PathBuf,
        /// Output directory; overrides `output` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Monte Carlo seed; overrides `seed` in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Multiplies every check tolerance.
        #[arg(long, default_value_t = 1.0)]
        tol_scale: f64,
    },
    /// List the stages available for each model.
    List {
        #[arg(long, value_enum)]
        model: Option<Model>,
    },
    /// Print the version.
    Version,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Version => {
            println!("embedlab {}", env!("CARGO_PKG_VERSION"));
            ExitCode::SUCCESS
        }
        Command::List { model } => {
            let models = match model {
                Some(m) => vec![m],
                None => vec![Model::Bs, Model::Uvol, Model::Chain],
            };
            for m in models {
                println!("[{}]", m.name());
                for s in stages::catalog(m) {
                    println!("  {:<18} {:<15} {}", s.name, s.artifact, s.description);
                }
            }
            ExitCode::SUCCESS
        }
        Command::Run {
            config,
            out,
            seed,
            tol_scale,
        } => run(config, out, seed, tol_scale),
    }
}

fn usage(err: anyhow::Error) -> ExitCode {
    eprintln!("error: {err:#}");
    ExitCode::from(EXIT_USAGE)
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("EMBEDLAB_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| anyhow::anyhow!("EMBEDLAB_THREADS must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(config: PathBuf, out: Option<PathBuf>, seed: Option<u64>, tol_scale: f64) -> ExitCode {
    if let Err(e) = configure_threads() {
        return usage(e);
    }
    if !(tol_scale > 0.0 && tol_scale.is_finite()) {
        return usage(anyhow::anyhow!("--tol-scale must be positive, got {tol_scale}"));
    }
    let cfg = match ExperimentConfig::load(&config).and_then(|c| c.validate().map(|_| c)) {
        Ok(c) => c,
        Err(e) => return usage(e),
    };
    let plan = match stages::plan(&cfg) {
        Ok(p) => p,
        Err(e) => return usage(e),
    };
    let dir = out.or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let mut outdir = match OutputDir::create(&dir) {
        Ok(o) => o,
        Err(e) => return usage(e),
    };
    let opts = RunOptions {
        seed: seed.unwrap_or(cfg.seed),
        tol_scale,
    };
    let result = stages::run(&cfg, &plan, &opts, &mut outdir);
    for r in outdir.summary() {
        let tag = match r.status {
            Status::Pass => "pass",
            Status::Fail => "FAIL",
            Status::Info => "info",
        };
        println!("{tag:<5} {:<18} {:<36} {:.6e}", r.stage, r.check, r.value);
    }
    if let Err((stage, err)) = result {
        eprintln!("error: {err:#}");
        outdir.mark_failed(&stage, &err);
        return ExitCode::from(EXIT_ENGINE);
    }
    println!("artifacts in {}: {}", outdir.path().display(), outdir.written().join(", "));
    if outdir.summary().iter().any(|r| r.status == Status::Fail) {
        ExitCode::from(EXIT_CHECK_FAILED)
    } else {
        ExitCode::SUCCESS
    }
}
