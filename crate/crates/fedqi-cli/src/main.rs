use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use fedqi_cli::config::ConfigBuilder;
use fedqi_cli::{emit_results, presets, run_experiment};

#[derive(Parser)]
#[command(
    name = "fedqi",
    about = "Federated-learning simulator inferring participant data quality from aggregated updates",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configured experiment and emit CSV/JSON results.
    Run(RunArgs),
    /// Run an experiment and sweep the scoring-rule grid over its rounds.
    Grid(RunArgs),
    /// List the built-in scenario presets.
    Presets,
    /// Write the handcrafted IDX test fixtures.
    EmitFixtures {
        /// Output directory for the fixture files.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Configuration precedence: defaults < --preset < --config file < flags.
#[derive(Args)]
struct RunArgs {
    /// Flat key-value config file (`key = value` per line).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scenario preset name (see `fedqi presets`).
    #[arg(long)]
    preset: Option<String>,
    /// qi | attack | freeride | boost | loo | estimator | grid
    #[arg(long)]
    mode: Option<String>,
    /// Number of participants (N).
    #[arg(long)]
    participants: Option<usize>,
    /// Participants selected per round (b).
    #[arg(long)]
    select: Option<usize>,
    /// Training rounds (I).
    #[arg(long)]
    rounds: Option<usize>,
    /// Independent repetitions.
    #[arg(long)]
    folds: Option<usize>,
    /// Master seed; fold seeds are seed XOR fold index.
    #[arg(long)]
    seed: Option<u64>,
    /// Boost-mode weight update rate.
    #[arg(long)]
    kappa: Option<f64>,
    /// Comma-separated misbehaving participant ids (attack/freeride).
    #[arg(long)]
    cheaters: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for fold execution.
    #[arg(long)]
    workers: Option<usize>,
    /// Dataset directory (defaults to data/<dataset>).
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

impl RunArgs {
    fn into_builder(self, forced_mode: Option<&str>) -> Result<ConfigBuilder> {
        let mut builder = ConfigBuilder::default();
        if let Some(preset) = &self.preset {
            builder
                .set("preset", preset)
                .map_err(|e| anyhow::anyhow!(e))?;
        }
        if let Some(path) = &self.config {
            builder.apply_file(path)?;
        }
        let flags: [(&str, Option<String>); 10] = [
            ("mode", self.mode),
            ("participants", self.participants.map(|v| v.to_string())),
            ("select", self.select.map(|v| v.to_string())),
            ("rounds", self.rounds.map(|v| v.to_string())),
            ("folds", self.folds.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("kappa", self.kappa.map(|v| v.to_string())),
            ("cheaters", self.cheaters),
            ("workers", self.workers.map(|v| v.to_string())),
            (
                "data_dir",
                self.data_dir.map(|v| v.display().to_string()),
            ),
        ];
        for (key, value) in flags {
            if let Some(value) = value {
                builder.set(key, &value).map_err(|e| anyhow::anyhow!(e))?;
            }
        }
        if let Some(out) = &self.out {
            builder
                .set("out", &out.display().to_string())
                .map_err(|e| anyhow::anyhow!(e))?;
        }
        if let Some(mode) = forced_mode {
            builder.set("mode", mode).map_err(|e| anyhow::anyhow!(e))?;
        }
        Ok(builder)
    }
}

fn run(args: RunArgs, forced_mode: Option<&str>) -> Result<()> {
    let cfg = args.into_builder(forced_mode)?.build()?;
    println!(
        "running mode={} dataset={} N={} b={} rounds={} folds={} seed={}",
        cfg.mode.name(),
        cfg.dataset.name(),
        cfg.participants,
        cfg.select_count,
        cfg.rounds,
        cfg.folds,
        cfg.seed
    );
    let bundle = run_experiment(&cfg)?;
    for fold in &bundle.folds {
        println!(
            "fold {}: final accuracy {:.4}, final r_s {}",
            fold.fold,
            fold.final_accuracy(),
            fold.final_spearman
                .map(|c| format!("{c:.4}"))
                .unwrap_or_else(|| "degenerate".into()),
        );
    }
    let spearmans = bundle.final_spearmans();
    if !spearmans.is_empty() {
        println!(
            "mean final r_s: {:.4}",
            spearmans.iter().sum::<f64>() / spearmans.len() as f64
        );
    }
    if let Some(grid) = &bundle.grid {
        println!(
            "grid best: rules={} tau={} value_based={} skip={} (mean r_s {:.4})",
            grid.best.rules.label(),
            grid.best.tau_good,
            grid.best.value_based,
            grid.best.skip_rounds,
            grid.best_mean_spearman
        );
    }
    let written = emit_results(&bundle, &cfg.out_dir)?;
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn emit_fixtures(out: &PathBuf) -> Result<()> {
    std::fs::create_dir_all(out)
        .with_context(|| format!("creating fixture directory {}", out.display()))?;
    let labels = out.join("fixture-labels-idx1-ubyte");
    std::fs::write(&labels, fedqi_core::data::fixtures::label_stream())?;
    println!("wrote {}", labels.display());
    let images = out.join("fixture-images-idx3-ubyte");
    std::fs::write(&images, fedqi_core::data::fixtures::image_stream())?;
    println!("wrote {}", images.display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::init();
    match Cli::parse().command {
        Command::Run(args) => run(args, None),
        Command::Grid(args) => {
            if let Some(mode) = &args.mode {
                if mode != "grid" {
                    bail!("the grid subcommand fixes mode=grid; drop --mode {mode}");
                }
            }
            run(args, Some("grid"))
        }
        Command::Presets => {
            for preset in presets::PRESETS {
                println!(
                    "{:6} {} ({} participants, {} per round)",
                    preset.name, preset.description, preset.participants, preset.select
                );
            }
            Ok(())
        }
        Command::EmitFixtures { out } => emit_fixtures(&out),
    }
}
