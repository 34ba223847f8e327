use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rsde_cli::{run_experiment, verify_domain, CliError, ExperimentConfig, Summary};

#[derive(Parser)]
#[command(name = "rsde", version = rsde_cli::VERSION, about = "Experiments on reflected SDEs in non-smooth domains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment and write CSV plus summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides RSDE_SEED and the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Check the configured domain against the geometric conditions.
    Verify {
        #[arg(long)]
        config: PathBuf,
    },
}

fn report(summary: &Summary) {
    for v in &summary.verdicts {
        println!("{:<20} {}  {}", v.name, if v.passed { "PASS" } else { "FAIL" }, v.detail);
    }
}

fn main_inner(cli: Cli) -> Result<bool, CliError> {
    let seed_env = std::env::var("RSDE_SEED").ok();
    match cli.command {
        Command::Run { config, seed, out_dir, threads } => {
            if let Some(k) = threads {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(k)
                    .build_global()
                    .map_err(|e| CliError::runtime("thread pool", e))?;
            }
            let resolved = ExperimentConfig::load(&config)?.resolve(seed, seed_env.as_deref(), out_dir)?;
            let summary = run_experiment(&resolved)?;
            report(&summary);
            println!("wrote {}", resolved.out_dir.join("summary.json").display());
            Ok(summary.passed)
        }
        Command::Verify { config } => {
            let resolved = ExperimentConfig::load(&config)?.resolve(None, seed_env.as_deref(), None)?;
            let summary = verify_domain(&resolved)?;
            report(&summary);
            Ok(summary.passed)
        }
    }
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
