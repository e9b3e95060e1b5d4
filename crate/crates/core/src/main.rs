use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use oneshot_pde::experiment::{self, ExperimentConfig};
use oneshot_pde::Error;

#[derive(Parser)]
#[command(name = "oneshot-pde", version, about = "Learn a local PDE solution operator from one solution and predict new ones")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON experiment config; defaults to the named preset for `reproduce`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Multiplies every optimizer iteration count.
    #[arg(long, global = true)]
    budget_scale: Option<f64>,
    /// Overrides the config's `seed` (or the forcing seed for `predict`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the training and base problems on the dense grid and restrict.
    GenData,
    /// Train the configured local operators.
    TrainLocal,
    /// Predict one test forcing with every backend of the first operator.
    Predict {
        /// Standard deviation of the GRF perturbation.
        #[arg(long, default_value_t = 0.1)]
        sigma: f64,
        /// Forcing CSV to use instead of a sampled one.
        #[arg(long)]
        forcing: Option<PathBuf>,
    },
    /// Evaluate all backends on the seeded test forcings and write tables.
    Evaluate,
    /// Run gen-data, train-local and evaluate for a preset.
    Reproduce {
        /// poisson, diffusion or nonlinear-dr
        name: String,
    },
}

fn load(cli: &Cli, preset: Option<&str>) -> Result<ExperimentConfig, Error> {
    let mut cfg = match (&cli.config, preset) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(name)) => ExperimentConfig::preset(name)?,
        (None, None) => return Err(Error::Config("--config is required".into())),
    };
    if let Some(s) = cli.budget_scale {
        cfg.budget_scale = s;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Error> {
    match &cli.command {
        Command::GenData => {
            let mut cfg = load(cli, None)?;
            cfg.seed = cli.seed.unwrap_or(cfg.seed);
            experiment::cmd_gen_data(&cfg)
        }
        Command::TrainLocal => {
            let mut cfg = load(cli, None)?;
            cfg.seed = cli.seed.unwrap_or(cfg.seed);
            experiment::cmd_train_local(&cfg)
        }
        Command::Predict { sigma, forcing } => {
            let cfg = load(cli, None)?;
            let seed = cli.seed.unwrap_or(cfg.test.base_seed);
            for path in experiment::cmd_predict(&cfg, *sigma, seed, forcing.as_deref())? {
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::Evaluate => {
            let mut cfg = load(cli, None)?;
            cfg.seed = cli.seed.unwrap_or(cfg.seed);
            experiment::cmd_evaluate(&cfg)?;
            println!("{}", cfg.out.join("results").join("summary.csv").display());
            Ok(())
        }
        Command::Reproduce { name } => {
            let mut cfg = load(cli, Some(name))?;
            cfg.seed = cli.seed.unwrap_or(cfg.seed);
            experiment::run_all(&cfg)?;
            print!("{}", std::fs::read_to_string(cfg.out.join("results").join("summary.md"))?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
