//! Experiment configuration: one TOML tree, resolved against per-environment
//! defaults, with `KEY=VALUE` overrides on dotted paths.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::deep::{AgentKind, DeepConfig};
use crate::envs::{CartPoleConfig, EnvKind, MarsRoverConfig};
use crate::error::{Error, Result};
use crate::urbe_agent::UrbeAgentConfig;

/// Version tag written into every output header.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvKind,
    /// First seed; multi-seed runs use `seed..seed + num_seeds`.
    pub seed: u64,
    pub num_seeds: usize,
    pub out: PathBuf,
    pub simple: SimpleRunConfig,
    pub deep: DeepRunConfig,
    pub mars_rover: MarsRoverConfig,
    pub cart_pole: CartPoleConfig,
    pub sweep: SweepConfig,
    pub heatmap: HeatmapConfig,
}

/// Tabular comparison on the simple MDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimpleRunConfig {
    pub episodes: usize,
    /// Successive values of `p_s3`.
    pub schedule: Vec<f64>,
    /// Episodes at which each schedule value takes effect; empty means equal regimes.
    pub switch_episodes: Vec<usize>,
    pub agent: UrbeAgentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeepRunConfig {
    pub agent: DeepConfig,
    pub train_episodes: usize,
    pub test_episodes: usize,
    /// Size of the finite model set used by robust targets.
    pub num_models: usize,
    /// Standard deviation of sampled pole lengths.
    pub length_std: f64,
    /// `[episode, value]` switch points for the dynamics parameter.
    pub schedule: Vec<(usize, f64)>,
    /// Episodes between intermediate checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resume: Option<PathBuf>,
    pub smoothing_window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    pub params: Vec<f64>,
    pub episodes: usize,
    /// Keep the uncertainty bonus at test time (off by default: greedy tests).
    pub bonus: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatmapConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// Dynamics parameter for the test episodes; defaults to the nominal value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param: Option<f64>,
    pub episodes: usize,
}

impl ExperimentConfig {
    /// Defaults for `env`, taken from the published hyper-parameter tables
    /// where they exist.
    pub fn defaults(env: EnvKind) -> Self {
        let (agent, train_episodes) = match env {
            EnvKind::CartPole => (DeepConfig::cart_pole(AgentKind::DqnUrbe), 4000),
            _ => (DeepConfig::mars_rover(AgentKind::DqnUrbe), 3000),
        };
        let mars_rover = MarsRoverConfig::default();
        let cart_pole = CartPoleConfig::default();
        Self {
            env,
            seed: 0,
            num_seeds: if env == EnvKind::Simple { 10 } else { 1 },
            out: PathBuf::from("runs"),
            simple: SimpleRunConfig {
                episodes: 1000,
                schedule: vec![0.001, 0.8, 0.1, 0.9],
                switch_episodes: Vec::new(),
                agent: UrbeAgentConfig::default(),
            },
            deep: DeepRunConfig {
                agent,
                train_episodes,
                test_episodes: 200,
                num_models: 15,
                length_std: 0.25,
                schedule: Vec::new(),
                checkpoint_every: 0,
                resume: None,
                smoothing_window: 50,
            },
            mars_rover,
            cart_pole,
            sweep: SweepConfig {
                checkpoint: None,
                params: match env {
                    EnvKind::CartPole => vec![0.25, 0.5, 0.75, 1.0, 1.25, 1.5],
                    _ => vec![0.005, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5],
                },
                episodes: 200,
                bonus: false,
            },
            heatmap: HeatmapConfig {
                checkpoint: None,
                param: None,
                episodes: 100,
            },
        }
    }

    /// Reads `path` (if any), applies `overrides`, fills defaults for the
    /// selected environment and validates the result.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut user = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                text.parse::<Table>().map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => Table::new(),
        };
        for o in overrides {
            apply_override(&mut user, o)?;
        }
        Self::resolve(user)
    }

    /// Fills defaults under a user tree and deserializes it, reporting the
    /// offending field path on failure.
    pub fn resolve(user: Table) -> Result<Self> {
        let env = match user.get("env") {
            Some(v) => deserialize_at::<EnvKind>(v.clone(), "env")?,
            None => EnvKind::MarsRover,
        };
        let mut tree = match Value::try_from(Self::defaults(env)) {
            Ok(Value::Table(t)) => t,
            Ok(_) => unreachable!("config serializes to a table"),
            Err(e) => return Err(Error::Config(e.to_string())),
        };
        merge(&mut tree, user);
        let config: Self = deserialize_at(Value::Table(tree), "")?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let at = |path: &str, e: Error| Error::Config(format!("{path}: {}", strip_kind(&e)));
        if self.num_seeds == 0 {
            return Err(Error::Config("num_seeds: must be >= 1".into()));
        }
        self.simple.agent.validate().map_err(|e| at("simple.agent", e))?;
        if self.simple.episodes == 0 {
            return Err(Error::Config("simple.episodes: must be >= 1".into()));
        }
        if self.simple.schedule.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("simple.schedule: values must lie in [0, 1]".into()));
        }
        if !self.simple.switch_episodes.is_empty() && self.simple.switch_episodes.len() != self.simple.schedule.len() {
            return Err(Error::Config("simple.switch_episodes: needs one entry per schedule value".into()));
        }
        self.simple_schedule().map_err(|e| at("simple.switch_episodes", e))?;
        self.deep.agent.validate().map_err(|e| at("deep.agent", e))?;
        if self.deep.num_models == 0 {
            return Err(Error::Config("deep.num_models: must be >= 1".into()));
        }
        if !(self.deep.length_std >= 0.0 && self.deep.length_std.is_finite()) {
            return Err(Error::Config("deep.length_std: must be non-negative".into()));
        }
        if self.deep.smoothing_window == 0 {
            return Err(Error::Config("deep.smoothing_window: must be >= 1".into()));
        }
        crate::envs::ParamSchedule::new(self.env.param_name(), self.deep.schedule.clone()).map_err(|e| at("deep.schedule", e))?;
        if self.sweep.episodes == 0 || self.heatmap.episodes == 0 {
            return Err(Error::Config("sweep.episodes and heatmap.episodes must be >= 1".into()));
        }
        Ok(())
    }

    /// The `p_s3` schedule of the tabular comparison.
    pub fn simple_schedule(&self) -> Result<crate::envs::ParamSchedule> {
        let param = EnvKind::Simple.param_name();
        if self.simple.switch_episodes.is_empty() {
            crate::envs::ParamSchedule::evenly_spaced(param, &self.simple.schedule, self.simple.episodes)
        } else {
            let points = self.simple.switch_episodes.iter().copied().zip(self.simple.schedule.iter().copied()).collect();
            crate::envs::ParamSchedule::new(param, points)
        }
    }

    /// Nominal value of the selected environment's dynamics parameter.
    pub fn nominal_param(&self) -> f64 {
        match self.env {
            EnvKind::Simple => self.simple.schedule.first().copied().unwrap_or(0.5),
            EnvKind::MarsRover => self.mars_rover.fail_prob,
            EnvKind::CartPole => self.cart_pole.pole_length,
        }
    }

    /// Single-line JSON of the resolved config, for output headers.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config is serializable")
    }

    /// The resolved config as TOML text.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

fn strip_kind(e: &Error) -> String {
    match e {
        Error::Config(m) | Error::InvalidInput(m) => m.clone(),
        other => other.to_string(),
    }
}

fn deserialize_at<T: serde::de::DeserializeOwned>(value: Value, prefix: &str) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let full = match (prefix.is_empty(), path == ".") {
            (true, _) => path,
            (false, true) => prefix.to_string(),
            (false, false) => format!("{prefix}.{path}"),
        };
        Error::Config(format!("{full}: {}", e.into_inner()))
    })
}

/// Recursively merges `over` into `base`; tables merge, everything else replaces.
fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Applies one `dotted.key=value` override. The value is parsed as a TOML
/// value and falls back to a bare string.
pub fn apply_override(tree: &mut Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Usage(format!("override '{spec}' is not KEY=VALUE")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Usage(format!("override '{spec}' has an empty key segment")));
    }
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.to_string()),
    };
    let (last, parents) = parts.split_last().expect("non-empty key");
    let mut node = tree;
    for p in parents {
        let entry = node.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        node = match entry {
            Value::Table(t) => t,
            _ => return Err(Error::Usage(format!("override '{spec}': '{p}' is not a table"))),
        };
    }
    node.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(overrides: &[&str]) -> Result<ExperimentConfig> {
        let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        ExperimentConfig::load(None, &o)
    }

    #[test]
    fn defaults_match_published_tables() {
        let c = load(&[]).unwrap();
        assert_eq!(c.env, EnvKind::MarsRover);
        assert_eq!(c.deep.agent.gamma, 0.9);
        assert_eq!(c.deep.agent.q_lr, 1e-4);
        assert_eq!(c.deep.agent.mu, 1e-2);
        assert_eq!(c.deep.agent.beta, 0.5);
        assert_eq!(c.deep.agent.batch_size, 100);
        assert_eq!(c.deep.agent.target_interval, 10);
        assert_eq!(c.deep.train_episodes, 3000);
        assert_eq!(c.deep.test_episodes, 200);
        let c = load(&["env=\"cart-pole\""]).unwrap();
        assert_eq!(c.deep.agent.batch_size, 256);
        assert_eq!(c.deep.train_episodes, 4000);
        assert_eq!(c.deep.agent.hidden, vec![128, 128, 128]);
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let c = load(&["deep.agent.mu=0.5", "simple.agent.psi=0.25", "env=cart-pole", "seed=7"]).unwrap();
        assert_eq!(c.deep.agent.mu, 0.5);
        assert_eq!(c.simple.agent.psi, 0.25);
        assert_eq!(c.env, EnvKind::CartPole);
        assert_eq!(c.seed, 7);
    }

    #[test]
    fn bad_type_reports_field_path() {
        let e = load(&["deep.agent.batch_size=\"many\""]).unwrap_err();
        let msg = e.to_string();
        assert!(matches!(e, Error::Config(_)));
        assert!(msg.contains("deep.agent.batch_size"), "{msg}");
    }

    #[test]
    fn unknown_field_is_rejected_with_path() {
        let msg = load(&["deep.agent.learning_rate=0.1"]).unwrap_err().to_string();
        assert!(msg.contains("deep.agent"), "{msg}");
        assert!(msg.contains("learning_rate"), "{msg}");
    }

    #[test]
    fn semantic_validation_names_section() {
        let msg = load(&["simple.agent.psi=3.0"]).unwrap_err().to_string();
        assert!(msg.contains("simple.agent"), "{msg}");
        let msg = load(&["deep.schedule=[[10, 1.0], [5, 1.2]]"]).unwrap_err().to_string();
        assert!(msg.contains("deep.schedule"), "{msg}");
    }

    #[test]
    fn malformed_override_is_usage_error() {
        assert!(matches!(load(&["nokey"]), Err(Error::Usage(_))));
        assert!(matches!(load(&["a..b=1"]), Err(Error::Usage(_))));
    }

    #[test]
    fn file_then_override_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "env = \"simple\"\n[simple]\nepisodes = 40\n[simple.agent]\nbeta = 0.3\n").unwrap();
        let c = ExperimentConfig::load(Some(&p), &["simple.episodes=80".into()]).unwrap();
        assert_eq!(c.env, EnvKind::Simple);
        assert_eq!(c.simple.episodes, 80);
        assert_eq!(c.simple.agent.beta, 0.3);
        assert_eq!(c.simple.agent.psi, UrbeAgentConfig::default().psi);
        assert_eq!(c.num_seeds, 10);
    }

    #[test]
    fn resolved_config_round_trips_through_toml() {
        let c = load(&["env=cart-pole", "deep.schedule=[[100, 1.25]]", "deep.resume=\"ckpt\""]).unwrap();
        let text = c.to_toml().unwrap();
        let back = ExperimentConfig::resolve(text.parse().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn quartile_schedule_by_default() {
        let c = load(&["env=simple"]).unwrap();
        let s = c.simple_schedule().unwrap();
        assert_eq!(s.points, vec![(0, 0.001), (250, 0.8), (500, 0.1), (750, 0.9)]);
    }
}
