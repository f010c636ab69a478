//! Experiment drivers behind the `urbe` binary: the tabular comparison,
//! deep training with schedules and checkpoints, test sweeps and visitation
//! exports. Every CSV starts with a `#` header block holding the schema tag,
//! the seed and the fully resolved config.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, SCHEMA_VERSION};
use crate::deep::{DeepAgent, FiniteUncertaintySet};
use crate::envs::{
    adversarial_schedule, sample_model_params, CartPoleEnv, CartPoleState, EnvKind, MarsRoverEnv, ParamSchedule, ParametricEnv, RoverState,
    SimpleMdpEnv,
};
use crate::error::{Error, Result};
use crate::mdp::{Environment, SimRng};
use crate::urbe_agent::{urbe_episode, EpisodeRecord, UrbeAgent, UrbeAgentConfig};

// ---------------------------------------------------------------------------
// Output plumbing

/// Parsed `#` header block of an output file.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputHeader {
    pub schema: String,
    pub seed: u64,
    pub config: ExperimentConfig,
}

fn header_block(schema: &str, seed: u64, config: &ExperimentConfig) -> String {
    format!("# schema: {schema}/v{SCHEMA_VERSION}\n# seed: {seed}\n# config: {}\n", config.to_json())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes `rows` as CSV under a header block.
pub fn write_csv<T: Serialize>(path: &Path, schema: &str, seed: u64, config: &ExperimentConfig, rows: &[T]) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(header_block(schema, seed, config).as_bytes())?;
    let mut csv = csv::Writer::from_writer(w);
    for r in rows {
        csv.serialize(r)?;
    }
    csv.flush()?;
    Ok(())
}

/// Writes one JSON object per line; the first line is `{"header": ...}`.
pub fn write_jsonl<T: Serialize>(path: &Path, schema: &str, seed: u64, config: &ExperimentConfig, rows: &[T]) -> Result<()> {
    let mut w = create(path)?;
    let header = serde_json::json!({ "header": { "schema": format!("{schema}/v{SCHEMA_VERSION}"), "seed": seed, "config": config } });
    writeln!(w, "{header}")?;
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a CSV written by [`write_csv`] back into its header and rows.
pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<(OutputHeader, Vec<T>)> {
    let file = BufReader::new(File::open(path)?);
    let mut schema = None;
    let mut seed = None;
    let mut config = None;
    let mut body = String::new();
    for line in file.lines() {
        let line = line?;
        if let Some(rest) = line.strip_prefix("# ") {
            match rest.split_once(": ") {
                Some(("schema", v)) => schema = Some(v.to_string()),
                Some(("seed", v)) => seed = v.parse().ok(),
                Some(("config", v)) => config = Some(serde_json::from_str(v)?),
                _ => {}
            }
        } else {
            body.push_str(&line);
            body.push('\n');
        }
    }
    let missing = || Error::InvalidInput(format!("{}: incomplete header block", path.display()));
    let header = OutputHeader {
        schema: schema.ok_or_else(missing)?,
        seed: seed.ok_or_else(missing)?,
        config: config.ok_or_else(missing)?,
    };
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let rows = reader.deserialize().collect::<std::result::Result<Vec<T>, _>>()?;
    Ok((header, rows))
}

/// Trailing moving average: entry `i` averages `values[i+1-window ..= i]`
/// (fewer at the start).
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for i in 0..values.len() {
        sum += values[i];
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

// ---------------------------------------------------------------------------
// Tabular comparison

/// One episode of one tabular agent on one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimpleRow {
    pub episode: usize,
    pub param: f64,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub accumulated: f64,
}

/// Mean and spread over seeds of the accumulated reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub agent: String,
    pub episode: usize,
    pub mean_accumulated: f64,
    pub std_accumulated: f64,
    pub num_seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimpleSummary {
    /// `(agent, mean final accumulated reward)` in run order.
    pub final_mean: Vec<(String, f64)>,
    pub files: Vec<PathBuf>,
}

impl SimpleSummary {
    pub fn final_mean_of(&self, agent: &str) -> Option<f64> {
        self.final_mean.iter().find(|(a, _)| a == agent).map(|(_, v)| *v)
    }
}

/// The three tabular agents: URBE, UBE (zero-radius sets) and the fully
/// robust planner.
pub fn simple_agents(base: &UrbeAgentConfig) -> Vec<(&'static str, UrbeAgentConfig)> {
    vec![("urbe", base.clone()), ("ube", base.ube()), ("robust", base.robust_baseline())]
}

/// Runs one agent on the scheduled simple MDP.
pub fn run_simple_job(
    agent_config: &UrbeAgentConfig,
    schedule: &ParamSchedule,
    episodes: usize,
    seed: u64,
) -> Result<(Vec<SimpleRow>, Vec<EpisodeRecord>)> {
    let mut rng = SimRng::seed_from_u64(seed);
    let mut env = SimpleMdpEnv::new(schedule.value_at(0).unwrap_or(0.5))?;
    let mut agent = UrbeAgent::new(&env, agent_config.clone())?;
    let mut rows = Vec::with_capacity(episodes);
    let mut records = Vec::with_capacity(episodes);
    let mut accumulated = 0.0;
    for episode in 0..episodes {
        adversarial_schedule(&mut env, schedule, episode)?;
        let (_, record) = urbe_episode(&mut agent, &mut env, &mut rng)?;
        accumulated += record.episode_return;
        rows.push(SimpleRow {
            episode,
            param: env.param(),
            episode_return: record.episode_return,
            accumulated,
        });
        records.push(record);
    }
    Ok((rows, records))
}

/// Per-seed CSV and JSONL for each agent, then `aggregate.csv` and `summary.json`.
pub fn run_urbe_simple(config: &ExperimentConfig) -> Result<SimpleSummary> {
    let schedule = config.simple_schedule()?;
    let agents = simple_agents(&config.simple.agent);
    let seeds: Vec<u64> = (0..config.num_seeds as u64).map(|i| config.seed + i).collect();
    let jobs: Vec<(usize, u64)> = (0..agents.len()).flat_map(|a| seeds.iter().map(move |&s| (a, s))).collect();
    let out = &config.out;

    let results: Vec<(usize, u64, Vec<SimpleRow>, Vec<PathBuf>)> = jobs
        .par_iter()
        .map(|&(a, seed)| {
            let (name, agent_config) = &agents[a];
            let (rows, records) = run_simple_job(agent_config, &schedule, config.simple.episodes, seed)?;
            let csv_path = out.join(format!("{name}_seed{seed}.csv"));
            let jsonl_path = out.join(format!("{name}_seed{seed}.jsonl"));
            write_csv(&csv_path, "urbe-simple-episodes", seed, config, &rows)?;
            write_jsonl(&jsonl_path, "urbe-simple-diagnostics", seed, config, &records)?;
            Ok((a, seed, rows, vec![csv_path, jsonl_path]))
        })
        .collect::<Result<_>>()?;

    let mut files = Vec::new();
    let mut aggregate = Vec::new();
    let mut final_mean = Vec::new();
    for (a, (name, _)) in agents.iter().enumerate() {
        let runs: Vec<&Vec<SimpleRow>> = results.iter().filter(|r| r.0 == a).map(|r| &r.2).collect();
        for episode in 0..config.simple.episodes {
            let acc: Vec<f64> = runs.iter().map(|rows| rows[episode].accumulated).collect();
            let (mean, std) = mean_std(&acc);
            aggregate.push(AggregateRow {
                agent: name.to_string(),
                episode,
                mean_accumulated: mean,
                std_accumulated: std,
                num_seeds: acc.len(),
            });
        }
        final_mean.push((name.to_string(), aggregate.last().map_or(0.0, |r: &AggregateRow| r.mean_accumulated)));
    }
    for r in &results {
        files.extend(r.3.iter().cloned());
    }
    let agg_path = out.join("aggregate.csv");
    write_csv(&agg_path, "urbe-simple-aggregate", config.seed, config, &aggregate)?;
    files.push(agg_path);
    let summary_path = out.join("summary.json");
    let mut summary = SimpleSummary { final_mean, files };
    summary.files.push(summary_path.clone());
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary)?)?;
    for (name, v) in &summary.final_mean {
        log::info!("{name}: mean final accumulated reward {v:.3}");
    }
    Ok(summary)
}

// ---------------------------------------------------------------------------
// Deep training

/// A training-log row: one per episode, plus `switch` markers where the
/// schedule changes the dynamics parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRow {
    pub row_type: String,
    pub episode: usize,
    pub param: f64,
    #[serde(rename = "return")]
    pub episode_return: Option<f64>,
    pub smoothed_return: Option<f64>,
    pub length: Option<usize>,
    pub epsilon: Option<f64>,
    pub q_loss: Option<f64>,
    pub w_loss: Option<f64>,
    pub mean_w_start: Option<f64>,
    pub updates: Option<u64>,
}

/// Files written so far and the run status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub status: String,
    pub files: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub first_episode: usize,
    pub episodes: usize,
    pub returns: Vec<f64>,
    pub smoothed: Vec<f64>,
    pub switches: Vec<usize>,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

pub fn run_train_deep(config: &ExperimentConfig) -> Result<TrainSummary> {
    match config.env {
        EnvKind::MarsRover => train_on(config, MarsRoverEnv::new(config.mars_rover)?),
        EnvKind::CartPole => train_on(config, CartPoleEnv::new(config.cart_pole)?),
        EnvKind::Simple => Err(Error::Unsupported("train-deep runs on mars-rover or cart-pole".into())),
    }
}

fn write_manifest(out: &Path, status: &str, files: &[PathBuf], error: Option<String>) -> Result<()> {
    let m = Manifest {
        status: status.into(),
        files: files.to_vec(),
        error,
    };
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&m)?)?;
    Ok(())
}

fn train_on<E>(config: &ExperimentConfig, mut env: E) -> Result<TrainSummary>
where
    E: ParametricEnv,
    E::State: Clone + std::fmt::Debug,
{
    let out = &config.out;
    let mut rng = SimRng::seed_from_u64(config.seed);
    let mut agent = match &config.deep.resume {
        Some(dir) => DeepAgent::load_checkpoint(&env, dir)?,
        None => {
            let params = sample_model_params(config.env, config.deep.num_models, config.nominal_param(), config.deep.length_std, &mut rng)?;
            let models = FiniteUncertaintySet::new(&env, params)?;
            DeepAgent::new(&env, config.deep.agent.clone(), models, &mut rng)?
        }
    };
    let first = agent.episodes();
    // A resumed run draws from a separate stream so it does not replay the
    // randomness of the episodes it continues from.
    rng.set_stream(first as u64);
    let schedule = ParamSchedule::new(env.param_name(), config.deep.schedule.clone())?;
    if let Some(v) = schedule.value_at(first) {
        env.set_param(v)?;
    }

    let log_path = out.join("train.csv");
    let mut files = vec![log_path.clone()];
    let mut writer = create(&log_path)?;
    writer.write_all(header_block("urbe-train", config.seed, config).as_bytes())?;
    let mut csv = csv::Writer::from_writer(writer);
    let mut returns = Vec::new();
    let mut switches = Vec::new();
    let window = config.deep.smoothing_window;
    let mut window_sum = 0.0;

    let save = |agent: &DeepAgent<E::State>, dir: &Path, files: &mut Vec<PathBuf>| -> Result<()> {
        match agent.save_checkpoint(dir) {
            Ok(()) => {
                files.push(dir.to_path_buf());
                Ok(())
            }
            Err(e) => {
                let msg = format!("writing checkpoint {}: {e}", dir.display());
                write_manifest(out, "failed", files, Some(msg.clone()))?;
                Err(Error::Checkpoint(msg))
            }
        }
    };

    for episode in first..config.deep.train_episodes {
        if let Some(ev) = adversarial_schedule(&mut env, &schedule, episode)? {
            switches.push(episode);
            csv.serialize(TrainRow {
                row_type: "switch".into(),
                episode,
                param: ev.value,
                episode_return: None,
                smoothed_return: None,
                length: None,
                epsilon: None,
                q_loss: None,
                w_loss: None,
                mean_w_start: None,
                updates: None,
            })?;
        }
        let m = agent.train_episode(&mut env, &mut rng)?;
        returns.push(m.episode_return);
        window_sum += m.episode_return;
        if returns.len() > window {
            window_sum -= returns[returns.len() - 1 - window];
        }
        let smoothed = window_sum / returns.len().min(window) as f64;
        csv.serialize(TrainRow {
            row_type: "episode".into(),
            episode: m.episode,
            param: m.param,
            episode_return: Some(m.episode_return),
            smoothed_return: Some(smoothed),
            length: Some(m.length),
            epsilon: Some(m.epsilon),
            q_loss: Some(m.q_loss),
            w_loss: Some(m.w_loss),
            mean_w_start: Some(m.mean_w_start),
            updates: Some(m.updates),
        })?;
        if episode % 100 == 99 {
            log::info!("episode {}: smoothed return {smoothed:.3}", episode + 1);
        }
        let k = config.deep.checkpoint_every;
        if k > 0 && (episode + 1) % k == 0 && episode + 1 < config.deep.train_episodes {
            csv.flush()?;
            save(&agent, &out.join("checkpoints").join(format!("episode_{}", episode + 1)), &mut files)?;
        }
    }
    csv.flush()?;
    let checkpoint = out.join("checkpoint");
    save(&agent, &checkpoint, &mut files)?;
    write_manifest(out, "complete", &files, None)?;
    Ok(TrainSummary {
        first_episode: first,
        episodes: returns.len(),
        smoothed: smooth(&returns, window),
        returns,
        switches,
        checkpoint,
        log: log_path,
    })
}

// ---------------------------------------------------------------------------
// Evaluation

/// Environments that can report whether a test episode succeeded.
trait TestEnv: ParametricEnv + Clone + Sync
where
    Self::State: Clone + std::fmt::Debug + Send + Sync,
{
    /// Rover: reached the goal. Cart-pole: survived the full horizon.
    fn succeeded(&self, final_state: &Self::State, length: usize) -> bool;
}

impl TestEnv for MarsRoverEnv {
    fn succeeded(&self, final_state: &RoverState, _length: usize) -> bool {
        *final_state
            == RoverState::Cell {
                row: MarsRoverEnv::GOAL.0,
                col: MarsRoverEnv::GOAL.1,
            }
    }
}

impl TestEnv for CartPoleEnv {
    fn succeeded(&self, _final_state: &CartPoleState, length: usize) -> bool {
        length >= self.horizon()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: f64,
    pub episodes: usize,
    pub mean_return: f64,
    pub std_return: f64,
    pub mean_length: f64,
    pub success_rate: f64,
}

fn required_checkpoint(path: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
    path.clone().ok_or_else(|| Error::Config(format!("{key}: a checkpoint directory is required")))
}

/// Greedy test episodes at every grid value; writes `sweep.csv`.
pub fn run_eval_sweep(config: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    if config.env == EnvKind::Simple {
        return Err(Error::Unsupported("eval-sweep runs on mars-rover or cart-pole".into()));
    }
    let checkpoint = required_checkpoint(&config.sweep.checkpoint, "sweep.checkpoint")?;
    if config.sweep.params.is_empty() {
        return Err(Error::Config("sweep.params: the grid must not be empty".into()));
    }
    let rows = match config.env {
        EnvKind::MarsRover => sweep_on(config, MarsRoverEnv::new(config.mars_rover)?, &checkpoint)?,
        EnvKind::CartPole => sweep_on(config, CartPoleEnv::new(config.cart_pole)?, &checkpoint)?,
        EnvKind::Simple => return Err(Error::Unsupported("eval-sweep runs on mars-rover or cart-pole".into())),
    };
    write_csv(&config.out.join("sweep.csv"), "urbe-sweep", config.seed, config, &rows)?;
    Ok(rows)
}

fn sweep_on<E>(config: &ExperimentConfig, env: E, checkpoint: &Path) -> Result<Vec<SweepRow>>
where
    E: TestEnv,
    E::State: Clone + std::fmt::Debug + Send + Sync,
{
    let agent: DeepAgent<E::State> = DeepAgent::load_checkpoint(&env, checkpoint)?;
    for &p in &config.sweep.params {
        env.check_param(p).map_err(|e| Error::Config(format!("sweep.params: {}", e)))?;
    }
    config
        .sweep
        .params
        .par_iter()
        .enumerate()
        .map(|(i, &p)| {
            let mut env = env.clone();
            env.set_param(p)?;
            let mut rng = SimRng::seed_from_u64(config.seed);
            rng.set_stream(i as u64);
            let runs = agent.evaluate(&mut env, config.sweep.episodes, config.sweep.bonus, &mut rng)?;
            let returns: Vec<f64> = runs.iter().map(|r| r.0).collect();
            let (mean_return, std_return) = mean_std(&returns);
            let lengths: Vec<usize> = runs.iter().map(|r| r.1.len() - 1).collect();
            let successes = runs
                .iter()
                .zip(&lengths)
                .filter(|((_, visits), &len)| env.succeeded(&visits.last().expect("final state").0, len))
                .count();
            Ok(SweepRow {
                param: p,
                episodes: runs.len(),
                mean_return,
                std_return,
                mean_length: lengths.iter().sum::<usize>() as f64 / runs.len() as f64,
                success_rate: successes as f64 / runs.len() as f64,
            })
        })
        .collect()
}

/// One row of the rover visitation matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapRow {
    pub row: usize,
    pub proportions: Vec<f64>,
}

/// One visited cart-pole state with the action taken there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub episode: usize,
    pub step: usize,
    pub x: f64,
    pub theta: f64,
    pub action: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum HeatmapOutput {
    /// Row-major 10x10 visit proportions summing to 1.
    Grid { proportions: Vec<Vec<f64>>, path: PathBuf },
    Scatter { rows: Vec<ScatterRow>, path: PathBuf },
}

impl HeatmapOutput {
    /// Proportion of visits on the goal cell (grid output only).
    pub fn goal_proportion(&self) -> Option<f64> {
        match self {
            HeatmapOutput::Grid { proportions, .. } => Some(proportions[MarsRoverEnv::GOAL.0][MarsRoverEnv::GOAL.1]),
            HeatmapOutput::Scatter { .. } => None,
        }
    }
}

/// Visitation export over test episodes: a rover heatmap or a cart-pole
/// `(x, theta, action)` scatter.
pub fn run_heatmap(config: &ExperimentConfig) -> Result<HeatmapOutput> {
    if config.env == EnvKind::Simple {
        return Err(Error::Unsupported("heatmaps need a spatial environment (mars-rover or cart-pole)".into()));
    }
    let checkpoint = required_checkpoint(&config.heatmap.checkpoint, "heatmap.checkpoint")?;
    let param = config.heatmap.param.unwrap_or(config.nominal_param());
    let mut rng = SimRng::seed_from_u64(config.seed);
    match config.env {
        EnvKind::MarsRover => {
            let mut env = MarsRoverEnv::new(config.mars_rover)?;
            env.set_param(param)?;
            let agent: DeepAgent<RoverState> = DeepAgent::load_checkpoint(&env, &checkpoint)?;
            let runs = agent.evaluate(&mut env, config.heatmap.episodes, false, &mut rng)?;
            let n = MarsRoverEnv::SIZE;
            let mut counts = vec![vec![0u64; n]; n];
            let mut total = 0u64;
            for (_, visits) in &runs {
                for (state, _) in visits {
                    if let RoverState::Cell { row, col } = *state {
                        counts[row][col] += 1;
                        total += 1;
                    }
                }
            }
            let proportions: Vec<Vec<f64>> = counts.iter().map(|r| r.iter().map(|&c| c as f64 / total.max(1) as f64).collect()).collect();
            let path = config.out.join("heatmap.csv");
            write_heatmap(&path, config, &proportions)?;
            Ok(HeatmapOutput::Grid { proportions, path })
        }
        EnvKind::CartPole => {
            let mut env = CartPoleEnv::new(config.cart_pole)?;
            env.set_param(param)?;
            let agent: DeepAgent<CartPoleState> = DeepAgent::load_checkpoint(&env, &checkpoint)?;
            let runs = agent.evaluate(&mut env, config.heatmap.episodes, false, &mut rng)?;
            let rows: Vec<ScatterRow> = runs
                .iter()
                .enumerate()
                .flat_map(|(episode, (_, visits))| {
                    visits.iter().enumerate().filter(|(_, (_, a))| *a != usize::MAX).map(move |(step, (s, a))| ScatterRow {
                        episode,
                        step,
                        x: s[0],
                        theta: s[2],
                        action: *a,
                    })
                })
                .collect();
            let path = config.out.join("scatter.csv");
            write_csv(&path, "urbe-scatter", config.seed, config, &rows)?;
            Ok(HeatmapOutput::Scatter { rows, path })
        }
        EnvKind::Simple => Err(Error::Unsupported("heatmaps need a spatial environment (mars-rover or cart-pole)".into())),
    }
}

fn write_heatmap(path: &Path, config: &ExperimentConfig, proportions: &[Vec<f64>]) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(header_block("urbe-heatmap", config.seed, config).as_bytes())?;
    let mut csv = csv::Writer::from_writer(w);
    let mut head = vec!["row".to_string()];
    head.extend((0..proportions.len()).map(|c| format!("c{c}")));
    csv.write_record(&head)?;
    for (r, row) in proportions.iter().enumerate() {
        let mut rec = vec![r.to_string()];
        rec.extend(row.iter().map(|p| p.to_string()));
        csv.write_record(&rec)?;
    }
    csv.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(overrides: &[&str], out: &Path) -> ExperimentConfig {
        let mut o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        o.push(format!("out=\"{}\"", out.display()));
        ExperimentConfig::load(None, &o).unwrap()
    }

    #[test]
    fn smoothing_is_trailing_mean() {
        let s = smooth(&[1.0, 2.0, 3.0, 4.0, 5.0], 2);
        assert_eq!(s, vec![1.0, 1.5, 2.5, 3.5, 4.5]);
        assert_eq!(smooth(&[2.0, 4.0], 50), vec![2.0, 3.0]);
    }

    #[test]
    fn simple_outputs_and_row_counts() {
        let dir = tempfile::tempdir().unwrap();
        let c = config(&["env=simple", "simple.episodes=20", "num_seeds=2"], dir.path());
        let summary = run_urbe_simple(&c).unwrap();
        let mut rows = 0;
        for agent in ["urbe", "ube", "robust"] {
            for seed in 0..2 {
                let (h, r): (_, Vec<SimpleRow>) = read_csv(&dir.path().join(format!("{agent}_seed{seed}.csv"))).unwrap();
                assert_eq!(h.seed, seed);
                assert_eq!(h.config, c);
                rows += r.len();
            }
        }
        let (_, agg): (_, Vec<AggregateRow>) = read_csv(&dir.path().join("aggregate.csv")).unwrap();
        assert_eq!(rows, 20 * 3 * 2);
        assert_eq!(agg.len(), 20 * 3);
        assert!((summary.final_mean_of("robust").unwrap() - 20.0 * 0.14).abs() < 1e-9);
    }

    #[test]
    fn robust_column_grows_by_minimax_reward() {
        let dir = tempfile::tempdir().unwrap();
        let c = config(&["env=simple", "simple.episodes=12", "num_seeds=1"], dir.path());
        run_urbe_simple(&c).unwrap();
        let (_, rows): (_, Vec<SimpleRow>) = read_csv(&dir.path().join("robust_seed0.csv")).unwrap();
        for w in rows.windows(2) {
            assert!((w[1].accumulated - w[0].accumulated - SimpleMdpEnv::REWARD_MINIMAX).abs() < 1e-12);
        }
    }

    #[test]
    fn aggregate_matches_per_seed_files() {
        let dir = tempfile::tempdir().unwrap();
        let c = config(&["env=simple", "simple.episodes=16", "num_seeds=3", "seed=5"], dir.path());
        run_urbe_simple(&c).unwrap();
        let (_, agg): (_, Vec<AggregateRow>) = read_csv(&dir.path().join("aggregate.csv")).unwrap();
        for agent in ["urbe", "ube", "robust"] {
            let per_seed: Vec<Vec<SimpleRow>> = (5..8).map(|s| read_csv(&dir.path().join(format!("{agent}_seed{s}.csv"))).unwrap().1).collect();
            for row in agg.iter().filter(|r| r.agent == agent) {
                let vals: Vec<f64> = per_seed.iter().map(|r| r[row.episode].accumulated).collect();
                let (m, s) = mean_std(&vals);
                assert!((m - row.mean_accumulated).abs() < 1e-12);
                assert!((s - row.std_accumulated).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn simple_runs_are_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ca = config(&["env=simple", "simple.episodes=30", "num_seeds=2"], a.path());
        let mut cb = ca.clone();
        cb.out = b.path().to_path_buf();
        run_urbe_simple(&ca).unwrap();
        run_urbe_simple(&cb).unwrap();
        for name in ["urbe_seed1.csv", "ube_seed0.jsonl", "robust_seed1.csv"] {
            let fa = std::fs::read_to_string(a.path().join(name)).unwrap();
            let fb = std::fs::read_to_string(b.path().join(name)).unwrap();
            // Only the output directory in the header differs.
            assert_eq!(fa.replace(&a.path().display().to_string(), ""), fb.replace(&b.path().display().to_string(), ""));
        }
    }

    fn tiny_rover(dir: &Path, extra: &[&str]) -> ExperimentConfig {
        let mut o = vec![
            "env=mars-rover",
            "deep.train_episodes=6",
            "deep.agent.batch_size=8",
            "deep.agent.replay_capacity=64",
            "deep.agent.hidden=[6, 6]",
            "deep.agent.w_hidden=[4]",
            "deep.num_models=3",
            "mars_rover.horizon=20",
            "sweep.episodes=3",
            "heatmap.episodes=4",
        ];
        o.extend_from_slice(extra);
        config(&o, dir)
    }

    #[test]
    fn training_logs_schedule_markers_and_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let c = tiny_rover(dir.path(), &["deep.schedule=[[3, 0.2]]", "deep.checkpoint_every=2"]);
        let s = run_train_deep(&c).unwrap();
        assert_eq!(s.switches, vec![3]);
        let (_, rows): (_, Vec<TrainRow>) = read_csv(&s.log).unwrap();
        assert_eq!(rows.len(), 7);
        let marker = rows.iter().position(|r| r.row_type == "switch").unwrap();
        assert_eq!(rows[marker].episode, 3);
        assert_eq!(rows[marker].param, 0.2);
        assert_eq!(rows[marker + 1].episode, 3);
        assert_eq!(rows[marker + 1].param, 0.2);
        assert!(rows[marker].episode_return.is_none());
        assert!(dir.path().join("checkpoints/episode_2/net.bin").exists());
        assert!(dir.path().join("checkpoint/state.json").exists());
        let m: Manifest = serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(m.status, "complete");
    }

    #[test]
    fn resume_continues_episode_numbering() {
        let dir = tempfile::tempdir().unwrap();
        let first = tiny_rover(&dir.path().join("a"), &[]);
        run_train_deep(&first).unwrap();
        let ckpt = dir.path().join("a/checkpoint");
        let resume = format!("deep.resume=\"{}\"", ckpt.display());
        let second = tiny_rover(&dir.path().join("b"), &[&resume, "deep.train_episodes=10"]);
        let s = run_train_deep(&second).unwrap();
        assert_eq!(s.first_episode, 6);
        let (_, rows): (_, Vec<TrainRow>) = read_csv(&s.log).unwrap();
        let eps: Vec<usize> = rows.iter().map(|r| r.episode).collect();
        assert_eq!(eps, vec![6, 7, 8, 9]);
    }

    #[test]
    fn unwritable_checkpoint_leaves_failed_manifest() {
        let dir = tempfile::tempdir().unwrap();
        // A regular file where the checkpoint directory should go.
        std::fs::write(dir.path().join("checkpoint"), b"occupied").unwrap();
        let c = tiny_rover(dir.path(), &[]);
        let e = run_train_deep(&c).unwrap_err();
        assert!(matches!(e, Error::Checkpoint(_)), "{e}");
        let m: Manifest = serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(m.status, "failed");
        assert!(m.files.iter().any(|f| f.ends_with("train.csv")));
        assert!(m.error.is_some());
    }

    #[test]
    fn sweep_and_heatmap_from_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let c = tiny_rover(dir.path(), &[]);
        run_train_deep(&c).unwrap();
        let ck = format!("\"{}\"", dir.path().join("checkpoint").display());
        let c = tiny_rover(dir.path(), &[&format!("sweep.checkpoint={ck}"), &format!("heatmap.checkpoint={ck}"), "sweep.params=[0.3]"]);
        let rows = run_eval_sweep(&c).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].episodes, 3);
        let h = run_heatmap(&c).unwrap();
        let HeatmapOutput::Grid { proportions, .. } = &h else { panic!("rover gives a grid") };
        let total: f64 = proportions.iter().flatten().sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!(h.goal_proportion().is_some());
        let (_, back): (_, Vec<HeatmapIndexRow>) = read_csv(&dir.path().join("heatmap.csv")).unwrap();
        assert_eq!(back.len(), 10);

        let bad = tiny_rover(dir.path(), &[&format!("sweep.checkpoint={ck}"), "sweep.params=[1.5]"]);
        assert!(matches!(run_eval_sweep(&bad), Err(Error::Config(_))));
    }

    #[derive(Deserialize)]
    #[allow(dead_code)]
    struct HeatmapIndexRow {
        row: usize,
    }

    #[test]
    fn simple_env_heatmap_is_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let c = config(&["env=simple", "heatmap.checkpoint=\"x\""], dir.path());
        assert!(matches!(run_heatmap(&c), Err(Error::Unsupported(_))));
        assert!(matches!(run_train_deep(&c), Err(Error::Unsupported(_))));
    }

    #[test]
    fn cart_pole_scatter_rows() {
        let dir = tempfile::tempdir().unwrap();
        let o = [
            "env=cart-pole",
            "deep.train_episodes=2",
            "deep.agent.batch_size=8",
            "deep.agent.replay_capacity=64",
            "deep.agent.hidden=[8]",
            "deep.agent.w_hidden=[4]",
            "deep.num_models=2",
            "cart_pole.horizon=30",
            "heatmap.episodes=3",
        ];
        let c = config(&o, dir.path());
        run_train_deep(&c).unwrap();
        let mut o2: Vec<String> = o.iter().map(|s| s.to_string()).collect();
        o2.push(format!("heatmap.checkpoint=\"{}\"", dir.path().join("checkpoint").display()));
        let o2: Vec<&str> = o2.iter().map(|s| s.as_str()).collect();
        let c = config(&o2, dir.path());
        let HeatmapOutput::Scatter { rows, path } = run_heatmap(&c).unwrap() else { panic!("cart-pole gives a scatter") };
        assert!(!rows.is_empty());
        assert!(rows.iter().all(|r| r.action < 2 && r.episode < 3));
        let (_, back): (_, Vec<ScatterRow>) = read_csv(&path).unwrap();
        assert_eq!(back, rows);
    }
}
