use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use r2d2_core::bayes_layers::load_checkpoint;
use r2d2_core::distributions::RngState;
use r2d2_core::harness::idx::labels_path_for;
use r2d2_core::harness::{
    generate_scenario, read_idx, read_idx_images, run_benchmark, run_ood, shrinkage_density_dump, write_density_csv,
    write_scenario_csv, BenchConfig, DensityGrid, OodConfig, Scenario, ScenarioId,
};
use r2d2_core::inference::PosteriorSamples;
use r2d2_core::Result;

#[derive(Parser)]
#[command(name = "bench", about = "R2D2 Bayesian neural network experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a benchmark grid from a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a simulated dataset as CSV.
    Scenario {
        #[arg(long)]
        id: String,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3.0)]
        noise_sd: f64,
        /// Write to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a Bayesian LeNet on IDX images and score OOD images by entropy.
    Ood {
        /// In-distribution images (IDX, e.g. MNIST train-images-idx3-ubyte).
        #[arg(long)]
        train: PathBuf,
        /// Labels for --train; inferred from the MNIST file naming if absent.
        #[arg(long)]
        train_labels: Option<PathBuf>,
        /// Out-of-distribution images (IDX, e.g. FashionMNIST).
        #[arg(long)]
        ood: PathBuf,
        /// TOML overrides for the demo settings.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Dump posterior densities of the smallest first-layer weights.
    Densities {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 1.0)]
        half_width: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Run { config, out } => {
            let cfg = BenchConfig::load(&config)?;
            let report = run_benchmark(&cfg, Some(&out))?;
            println!("{:<16} {:>3} {:>5} {:>7} {:>12} {:>12}", "model", "L", "runs", "failed", "mse", "pred_sd");
            for r in &report.summary {
                let f = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
                println!(
                    "{:<16} {:>3} {:>5} {:>7} {:>12} {:>12}",
                    r.model,
                    r.depth,
                    r.runs,
                    r.failed,
                    f(r.mse_mean),
                    f(r.pred_sd_mean)
                );
            }
            for r in report.runs.iter().filter(|r| r.error.is_some()) {
                eprintln!("{} L={} seed {} failed: {}", r.model, r.depth, r.seed, r.error.as_deref().unwrap_or(""));
            }
            Ok(())
        }
        Command::Scenario { id, n, seed, noise_sd, out } => {
            let s = Scenario { noise_sd, ..Scenario::new(ScenarioId::parse(&id)?, n, seed) };
            let split = generate_scenario(&s, &mut RngState::new(seed, 0))?;
            match out {
                Some(path) => write_scenario_csv(&split, std::fs::File::create(path)?),
                None => write_scenario_csv(&split, std::io::stdout().lock()),
            }
        }
        Command::Ood { train, train_labels, ood, config } => {
            let labels = match train_labels.or_else(|| labels_path_for(&train)) {
                Some(p) => p,
                None => return Err(r2d2_core::Error::Config("--train-labels is required".into())),
            };
            let cfg = match config {
                Some(p) => toml::from_str::<OodConfig>(&std::fs::read_to_string(p)?)
                    .map_err(|e| r2d2_core::Error::Config(e.to_string()))?,
                None => OodConfig::default(),
            };
            let (images, labels) = read_idx(&train, &labels)?;
            let ood_images = read_idx_images(&ood)?;
            let result = run_ood(&cfg, &images, &labels, &ood_images)?;
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{}", serde_json::to_string_pretty(&result)?)?;
            Ok(())
        }
        Command::Densities { checkpoint, k, samples, half_width, out } => {
            let (net, seed) = load_checkpoint(&checkpoint)?;
            let draws = PosteriorSamples::from_variational(&net, samples, &RngState::new(seed, 4))?;
            let grid = DensityGrid { half_width, ..DensityGrid::default() };
            let dumps = shrinkage_density_dump(&net, &draws, k, &grid)?;
            write_density_csv(&out, &dumps)?;
            for d in &dumps {
                println!("weight {} mean {:.3e} density(0) {:.4e}", d.weight_id, d.mean, d.density_at(0.0));
            }
            Ok(())
        }
    }
}
