//! `nrcid`: enrollment, identification, evaluation and parameter sweeps for
//! compression-based biometric identification.

mod commands;
mod config;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Format;
use config::{ModelArgs, PathFlags, RunConfig};
use exit::{CliResult, Code, Failure, OrExit};

#[derive(Parser)]
#[command(
    name = "nrcid",
    version,
    about = "Biometric identification by relative compression"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic dataset.
    Synth {
        /// Synthetic spec (TOML). Defaults to the built-in five-participant fixture.
        #[arg(long, value_name = "FILE")]
        spec: Option<PathBuf>,
        /// Dataset directory to write.
        #[arg(long, required_unless_present = "emit_spec")]
        out: Option<PathBuf>,
        /// Overrides the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Print the resolved spec as TOML instead of generating data.
        #[arg(long)]
        emit_spec: bool,
    },
    /// Train one model per participant and write them to the store.
    Enroll {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Model directory; falls back to the config file, then NRCID_STORE.
        #[arg(long)]
        store: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Rank every enrolled participant for one recorded segment.
    Identify {
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
        #[arg(long)]
        threads: Option<usize>,
        /// Segment file: one sample per line.
        segment: PathBuf,
    },
    /// Session-holdout evaluation at one (k, d).
    Evaluate {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Evaluation over a grid of (k, d).
    Sweep {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Reuse finished cells recorded in the output directory.
        #[arg(long)]
        resume: bool,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Summarize a model file.
    Inspect { model: PathBuf },
}

fn init_threads(threads: Option<usize>) -> CliResult<()> {
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .or_exit(Code::Internal)?;
    }
    Ok(())
}

fn resolve(model: &ModelArgs, paths: PathFlags, single_cell: bool) -> CliResult<RunConfig> {
    let cfg = RunConfig::resolve(model, &paths, single_cell).or_exit(Code::Config)?;
    init_threads(cfg.threads)?;
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<String> {
    match cli.command {
        Command::Synth {
            spec,
            out,
            seed,
            emit_spec,
        } => {
            if emit_spec {
                let mut s = match &spec {
                    Some(p) => commands::read_synthetic_spec(p)?,
                    None => nrcid::eval::SyntheticSpec::fixture(),
                };
                if let Some(seed) = seed {
                    s.seed = seed;
                }
                return commands::synthetic_spec_toml(&s).map(|t| t.trim_end().to_string());
            }
            let out = out.expect("clap enforces --out");
            commands::synth(spec.as_deref(), &out, seed)
        }
        Command::Enroll {
            dataset,
            store,
            model,
        } => {
            let paths = PathFlags {
                dataset,
                store,
                ..Default::default()
            };
            commands::enroll_cmd(&resolve(&model, paths, true)?)
        }
        Command::Identify {
            store,
            format,
            threads,
            segment,
        } => {
            init_threads(threads)?;
            let store = store
                .or_else(|| std::env::var_os(config::STORE_ENV).map(PathBuf::from))
                .ok_or_else(|| {
                    exit::fail(
                        Code::Config,
                        anyhow::anyhow!(
                            "invalid configuration:\n  - --store or {} is required",
                            config::STORE_ENV
                        ),
                    )
                })?;
            commands::identify_cmd(&store, &segment, format)
        }
        Command::Evaluate {
            dataset,
            out,
            model,
        } => {
            let paths = PathFlags {
                dataset,
                out,
                ..Default::default()
            };
            commands::evaluate_cmd(&resolve(&model, paths, true)?)
        }
        Command::Sweep {
            dataset,
            out,
            resume,
            model,
        } => {
            let paths = PathFlags {
                dataset,
                out,
                ..Default::default()
            };
            commands::sweep_cmd(&resolve(&model, paths, false)?, resume)
        }
        Command::Inspect { model } => commands::inspect_cmd(&model),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(Failure { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code as u8)
        }
    }
}
