use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use darc_cli::config::{load_config, ExperimentKind};
use darc_cli::run::{error_record, run_experiment, RunOptions};

#[derive(Parser)]
#[command(name = "darc-lab", version, about = "Numerical laboratory for decoupled questioner/solver self-play")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; every field is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `seed` from the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory that receives the run directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Dotted field override, e.g. `--set model.gamma=0.5`. Repeatable.
    #[arg(long = "set", value_name = "FIELD=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Check the next-round objective reversal on the toy model.
    TheoremCheck(Common),
    /// Iterate the coupled toy dynamics and write the trajectory.
    CoupledSim(Common),
    /// Train the tiered questioner against the frozen estimator.
    TrainQuestioner(Common),
    /// Build the offline set and train the student on it.
    TrainSolver {
        #[command(flatten)]
        common: Common,
        /// Shuffle the offline set instead of ordering it easy to hard.
        #[arg(long)]
        shuffle: bool,
    },
    /// Cross-iteration accuracy heatmaps for the coupled baseline and the decoupled run.
    Heatmap(Common),
    /// Analytic gradients against finite differences.
    GradCheck(Common),
    /// Paired student runs with a weakened or frozen teacher.
    Ablation(Common),
    /// Write a synthetic corpus.
    GenCorpus {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long, allow_hyphen_values = true)]
        offset_min: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        offset_max: Option<f64>,
    },
    /// Summarize a corpus file.
    CorpusStats {
        #[command(flatten)]
        common: Common,
        path: PathBuf,
        #[arg(long)]
        bins: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut options = RunOptions::default();
    let mut extra = Vec::new();
    let (kind, common) = match cli.command {
        Command::TheoremCheck(c) => (ExperimentKind::TheoremCheck, c),
        Command::CoupledSim(c) => (ExperimentKind::CoupledSim, c),
        Command::TrainQuestioner(c) => (ExperimentKind::TrainQuestioner, c),
        Command::TrainSolver { common, shuffle } => {
            options.shuffle = shuffle;
            (ExperimentKind::TrainSolver, common)
        }
        Command::Heatmap(c) => (ExperimentKind::Heatmap, c),
        Command::GradCheck(c) => (ExperimentKind::GradCheck, c),
        Command::Ablation(c) => (ExperimentKind::Ablation, c),
        Command::GenCorpus {
            common,
            size,
            offset_min,
            offset_max,
        } => {
            extra.extend(size.map(|v| format!("corpus.size={v}")));
            extra.extend(offset_min.map(|v| format!("corpus.offset_min={v:?}")));
            extra.extend(offset_max.map(|v| format!("corpus.offset_max={v:?}")));
            (ExperimentKind::GenCorpus, common)
        }
        Command::CorpusStats { common, path, bins } => {
            extra.push(format!("corpus.path={:?}", path.display().to_string()));
            extra.extend(bins.map(|v| format!("corpus.histogram_bins={v}")));
            (ExperimentKind::CorpusStats, common)
        }
    };
    let mut overrides = common.set.clone();
    overrides.extend(extra);
    if let Some(seed) = common.seed {
        overrides.push(format!("seed={seed}"));
    }
    let loaded = match load_config(common.config.as_deref(), &overrides) {
        Ok(l) => l,
        Err(e) => {
            let record = error_record(kind.name(), None, &anyhow::Error::new(e));
            eprintln!("{record}");
            return ExitCode::from(2);
        }
    };
    match run_experiment(kind, &loaded, options, &common.out) {
        Ok(outcome) => {
            println!("{}", outcome.dir.display());
            if outcome.success() {
                ExitCode::SUCCESS
            } else {
                eprintln!(
                    "{}",
                    serde_json::json!({ "status": "checks_failed", "experiment": kind.name(), "run_dir": outcome.dir.display().to_string() })
                );
                ExitCode::from(1)
            }
        }
        Err((dir, e)) => {
            eprintln!("{}", error_record(kind.name(), dir.as_deref(), &e));
            ExitCode::from(1)
        }
    }
}
