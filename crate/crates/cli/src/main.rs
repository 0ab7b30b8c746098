use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use crs_rlhf_core::config::{self, RunConfig};
use crs_rlhf_core::parallel;
use crs_rlhf_core::run::{self, Stage};

#[derive(Parser)]
#[command(name = "crs-rlhf", version, about = "Desk-scale RLHF for conversational recommendation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct Common {
    /// JSON config overlaid on the preset; absent keys keep their defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides run.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides run.output_dir.
    #[arg(long, value_name = "DIR")]
    out: Option<String>,
    #[arg(long, value_parser = config::PRESETS, default_value = "desk")]
    preset: String,
    /// Overrides run.run_id.
    #[arg(long)]
    run_id: Option<String>,
    /// Extra `key.path=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate (or ingest) the logged dialogue corpus.
    GenCorpus(Common),
    /// Supervised next-action pretraining on the corpus.
    Pretrain(Common),
    /// Fit the reward model to weak labels from the corpus.
    TrainReward(Common),
    /// PPO fine-tuning of the pretrained policy.
    TrainPpo(Common),
    /// Compare the tuned policy with the pretrained baseline.
    Evaluate(Common),
    /// Reward-signal ablation over the benchmark seeds.
    Ablate(Common),
    /// Render tables and figure CSVs from existing reports.
    Report(Common),
    /// The whole pipeline once per benchmark seed.
    Benchmark(Common),
    /// Print the resolved configuration.
    ShowConfig(Common),
}

fn resolve(c: &Common) -> crs_rlhf_core::Result<RunConfig> {
    let mut overrides = Vec::new();
    if let Some(s) = c.seed {
        overrides.push(format!("run.seed={s}"));
    }
    if let Some(o) = &c.out {
        overrides.push(format!("run.output_dir={}", serde_json_string(o)));
    }
    if let Some(r) = &c.run_id {
        overrides.push(format!("run.run_id={}", serde_json_string(r)));
    }
    overrides.extend(c.set.iter().cloned());
    config::resolve(Some(&c.preset), c.config.as_deref(), &overrides)
}

// keeps numeric-looking directory names strings
fn serde_json_string(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    parallel::init_from_env();
    let cli = Cli::parse();
    let (stage, common) = match &cli.command {
        Command::GenCorpus(c) => (Some(Stage::GenCorpus), c),
        Command::Pretrain(c) => (Some(Stage::Pretrain), c),
        Command::TrainReward(c) => (Some(Stage::TrainReward), c),
        Command::TrainPpo(c) => (Some(Stage::TrainPpo), c),
        Command::Evaluate(c) => (Some(Stage::Evaluate), c),
        Command::Ablate(c) => (Some(Stage::Ablate), c),
        Command::Report(c) => (Some(Stage::Report), c),
        Command::Benchmark(c) => (Some(Stage::Benchmark), c),
        Command::ShowConfig(c) => (None, c),
    };
    let result = resolve(common).and_then(|cfg| match stage {
        None => {
            println!("{}", cfg.to_json());
            Ok(())
        }
        Some(stage) => {
            let root = run::RunDir::path_for(&cfg);
            for rel in run::run_stage(stage, &cfg)? {
                println!("{}", root.join(rel).display());
            }
            Ok(())
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
