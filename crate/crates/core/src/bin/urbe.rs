use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use urbe_core::config::ExperimentConfig;
use urbe_core::experiment::{run_eval_sweep, run_heatmap, run_train_deep, run_urbe_simple, HeatmapOutput};
use urbe_core::Error;

#[derive(Parser)]
#[command(name = "urbe", version, about = "Robust exploration experiments: tabular URBE and DQN-URBE")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tabular URBE vs UBE vs the robust baseline on the scheduled simple MDP.
    UrbeSimple(Common),
    /// Train a deep agent, with an optional mid-training parameter schedule.
    TrainDeep(Common),
    /// Greedy test episodes of a checkpoint over a parameter grid.
    EvalSweep(WithCheckpoint),
    /// Visitation heatmap (rover) or state scatter (cart-pole) of a checkpoint.
    Heatmap(WithCheckpoint),
}

#[derive(Args)]
struct Common {
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dotted config key and TOML value, e.g. `deep.agent.mu=0.02`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct WithCheckpoint {
    #[command(flatten)]
    common: Common,
    /// Checkpoint directory written by `train-deep`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

fn toml_string(s: &std::path::Path) -> String {
    toml::Value::String(s.display().to_string()).to_string()
}

fn load(common: &Common, checkpoint_key: Option<(&str, &Option<PathBuf>)>) -> urbe_core::Result<ExperimentConfig> {
    let mut overrides = common.overrides.clone();
    if let Some(seed) = common.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(out) = &common.out {
        overrides.push(format!("out={}", toml_string(out)));
    }
    if let Some((key, Some(path))) = checkpoint_key {
        overrides.push(format!("{key}={}", toml_string(path)));
    }
    ExperimentConfig::load(common.config.as_deref(), &overrides)
}

fn run(cli: Cli) -> urbe_core::Result<serde_json::Value> {
    match cli.command {
        Command::UrbeSimple(c) => {
            let config = load(&c, None)?;
            let summary = run_urbe_simple(&config)?;
            Ok(serde_json::json!({ "final_mean_accumulated": summary.final_mean, "out": config.out }))
        }
        Command::TrainDeep(c) => {
            let config = load(&c, None)?;
            let s = run_train_deep(&config)?;
            Ok(serde_json::json!({
                "first_episode": s.first_episode,
                "episodes": s.episodes,
                "final_smoothed_return": s.smoothed.last(),
                "checkpoint": s.checkpoint,
                "log": s.log,
            }))
        }
        Command::EvalSweep(c) => {
            let config = load(&c.common, Some(("sweep.checkpoint", &c.checkpoint)))?;
            let rows = run_eval_sweep(&config)?;
            Ok(serde_json::json!({ "rows": rows, "out": config.out.join("sweep.csv") }))
        }
        Command::Heatmap(c) => {
            let config = load(&c.common, Some(("heatmap.checkpoint", &c.checkpoint)))?;
            Ok(match run_heatmap(&config)? {
                HeatmapOutput::Grid { proportions, path } => serde_json::json!({
                    "goal_proportion": proportions[9][9],
                    "out": path,
                }),
                HeatmapOutput::Scatter { rows, path } => serde_json::json!({ "rows": rows.len(), "out": path }),
            })
        }
    }
}

fn fail(kind: &str, message: String, code: u8) -> ExitCode {
    eprintln!("{}", serde_json::json!({ "error": { "kind": kind, "message": message } }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string(), 2),
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let code = match e {
                Error::Config(_) | Error::Usage(_) => 2,
                _ => 1,
            };
            fail(e.kind(), e.to_string(), code)
        }
    }
}
