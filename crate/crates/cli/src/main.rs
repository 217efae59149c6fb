use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use deeprc::controllers::ExperimentMode;
use deeprc::harness::{emit_summary, load_config, run_experiment, write_artifacts, ExperimentConfig};

#[derive(Parser)]
#[command(name = "deeprc", version, about = "Data-enabled predictive repetitive control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Record wall times in costs.csv.
        #[arg(long)]
        timing: bool,
    },
    /// Run a builtin benchmark.
    Bench {
        #[arg(value_parser = ["four-tank"])]
        benchmark: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated subset of passive,2s-lkb,1s,nominal.
        #[arg(long, value_delimiter = ',')]
        modes: Option<Vec<String>>,
        #[arg(long)]
        timing: bool,
    },
    /// Parse and validate a config without running it.
    Validate { config: PathBuf },
}

fn execute(cfg: &ExperimentConfig) -> Result<()> {
    let report = run_experiment(cfg)?;
    let dir = cfg.resolved_output_dir();
    let written = write_artifacts(&report, &dir)?;
    print!("{}", emit_summary(&report));
    println!("\nwrote {} files to {}", written.len(), dir.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, timing } => load_config(&config)
            .with_context(|| format!("loading {}", config.display()))
            .and_then(|mut cfg| {
                cfg.timing |= timing;
                execute(&cfg)
            }),
        Command::Bench {
            benchmark: _,
            seed,
            modes,
            timing,
        } => (|| {
            let mut cfg = ExperimentConfig::four_tank();
            cfg.seed = seed;
            cfg.timing = timing;
            if let Some(list) = modes {
                cfg.modes.clear();
                for name in list {
                    let Some(mode) = ExperimentMode::parse(name.trim()) else {
                        bail!("unknown mode `{name}`; expected passive, 2s-lkb, 1s or nominal");
                    };
                    if !cfg.modes.contains(&mode) {
                        cfg.modes.push(mode);
                    }
                }
            }
            execute(&cfg)
        })(),
        Command::Validate { config } => load_config(&config)
            .with_context(|| format!("loading {}", config.display()))
            .map(|cfg| {
                let s = &cfg.settings;
                println!(
                    "ok: m={} p={} n={} ell={} nbar={} modes={}",
                    s.layout.m,
                    s.layout.p,
                    s.order,
                    s.layout.ell,
                    s.nbar,
                    cfg.modes.iter().map(|m| m.name()).collect::<Vec<_>>().join(",")
                );
            }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
