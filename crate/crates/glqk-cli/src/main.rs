//! `glqk` command-line front end: JSON configs in, deterministic artifacts
//! out. Exit codes: 0 success, 2 invalid argument or malformed input,
//! 3 numeric failure, 4 resource limit.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use glqk::harness::{self, AnalyzeConfig, ExperimentConfig, PlanConfig};

#[derive(Parser)]
#[command(
    name = "glqk",
    version,
    about = "Geometrically local quantum kernels: generate labelled shadow pools, \
             compare kernel methods, plan resources, analyze observables, and embed \
             pools with kernel PCA"
)]
struct Cli {
    /// Cap the worker-thread pool (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled shadow pool (`pool.glqs` + `manifest.json`).
    Generate {
        /// Experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the kernel-comparison experiment over a generated pool.
    Experiment {
        /// Experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Pool file produced by `generate`.
        #[arg(long)]
        pool: PathBuf,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print and save the four-regime resource plan for a polynomial.
    Plan {
        /// Plan config (JSON): polynomial, correlation length, accuracy.
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Print and save the cluster-decomposition report for a polynomial.
    Analyze {
        /// Analyze config (JSON): polynomial, splitting range, window width.
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Embed pool entries with kernel PCA (one CSV per kernel kind).
    Pca {
        /// Experiment config (JSON); `pca_*` fields control the embedding.
        #[arg(long)]
        config: PathBuf,
        /// Pool file produced by `generate`.
        #[arg(long)]
        pool: PathBuf,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn run(cli: Cli) -> glqk::Result<()> {
    if let Some(threads) = cli.threads {
        harness::configure_threads(threads)?;
    }
    match cli.command {
        Command::Generate { config, out, seed } => {
            let mut config = ExperimentConfig::load(&config)?;
            if let Some(seed) = seed {
                config.seed = seed;
            }
            let output = harness::cmd_generate(&config, &out)?;
            println!(
                "wrote {} entries to {} (manifest: {})",
                output.entries,
                output.pool_path.display(),
                output.manifest_path.display()
            );
        }
        Command::Experiment { config, pool, out, seed } => {
            let mut config = ExperimentConfig::load(&config)?;
            if let Some(seed) = seed {
                config.seed = seed;
            }
            let output = harness::cmd_experiment(&config, &pool, &out)?;
            for s in &output.summaries {
                println!(
                    "{} N={}: test score {:.4} +- {:.4} over {} repeats",
                    s.kernel.name(),
                    s.n_train,
                    s.mean_test_score,
                    s.std_test_score,
                    s.repeats
                );
            }
            println!("wrote results to {}", out.display());
        }
        Command::Plan { config, out } => {
            let config = PlanConfig::load(&config)?;
            let table = harness::cmd_plan(&config, &out)?;
            print!("{}", table.render());
            println!("wrote plan to {}", out.display());
        }
        Command::Analyze { config, out } => {
            let config = AnalyzeConfig::load(&config)?;
            let report = harness::cmd_analyze(&config, &out)?;
            print!("{}", report.render());
            println!("wrote report to {}", out.display());
        }
        Command::Pca { config, pool, out, seed } => {
            let mut config = ExperimentConfig::load(&config)?;
            if let Some(seed) = seed {
                config.seed = seed;
            }
            let output = harness::cmd_pca(&config, &pool, &out)?;
            for e in &output.embeddings {
                println!(
                    "{}: embedded {} entries ({} positive components)",
                    e.kernel.name(),
                    e.rows.len(),
                    e.eigenvalues.len()
                );
            }
            println!("wrote embeddings to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
