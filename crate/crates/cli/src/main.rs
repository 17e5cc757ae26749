use clap::{Parser, Subcommand};
use mdg_cli::{cmd_eval, cmd_gen_world, cmd_sample, load_world, run_selftest, CliError, CliResult, ExperimentConfig};
use mdg_core::GuidanceMode;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "mdg", version, about = "Volume-guided sampling experiments on a synthetic tri-modal world")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a world from the config and write it as JSON.
    GenWorld {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run guided sampling and write per-sample results.
    Sample {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        world: PathBuf,
        /// Defaults to `run.out_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        mode: Option<GuidanceMode>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Compare result directories sampled from the same world.
    Eval {
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        results: Vec<PathBuf>,
    },
    /// Run the built-in invariant checks.
    Selftest {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

// a closed stdout (e.g. piped into `head`) is not an error
fn print_json<T: serde::Serialize>(value: &T) {
    let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(value).expect("summary serializes"));
}

fn run(cli: Cli) -> CliResult<bool> {
    match cli.command {
        Command::GenWorld { config, out } => {
            let config = ExperimentConfig::load_or_default(config.as_deref())?;
            print_json(&cmd_gen_world(&config, &out)?);
        }
        Command::Sample { config, world, out, mode, seed, jobs } => {
            let mut config = ExperimentConfig::load_or_default(config.as_deref())?;
            if let Some(mode) = mode {
                config.guidance.mode = mode;
            }
            if let Some(seed) = seed {
                config.run.seed = seed;
            }
            let out = out
                .or_else(|| config.run.out_dir.clone().map(PathBuf::from))
                .ok_or_else(|| CliError::Config("no output directory: pass --out or set run.out_dir".into()))?;
            let (world, hash) = load_world(&world)?;
            print_json(&cmd_sample(&config, &world, &hash, &out, jobs)?);
        }
        Command::Eval { world, out, results } => {
            let (world, hash) = load_world(&world)?;
            print_json(&cmd_eval(&results, &world, &hash, Path::new(&out))?);
        }
        Command::Selftest { config } => {
            let config = ExperimentConfig::load_or_default(config.as_deref())?;
            let checks = run_selftest(&config);
            for c in &checks {
                let _ =
                    writeln!(std::io::stdout(), "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            return Ok(checks.iter().all(|c| c.passed));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MDG_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            log::error!("{e}");
            eprintln!("{}", serde_json::to_string(&e.report()).expect("error serializes"));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
