//! Deep agents: vanilla DQN, robust DQN (min over a finite model set in the TD
//! target), and their uncertainty-head variants DQN-UBE and DQN-URBE.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::envs::ParametricEnv;
use crate::error::{invalid, Error, Result};
use crate::mdp::{argmax, SimRng};
use crate::neural::{HeadsOutput, Optimizer, OptimizerKind, TwoHeadNet};

/// One stored transition. `elapsed` is the number of steps taken before it.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience<S> {
    pub state: S,
    pub action: usize,
    pub reward: f64,
    pub next_state: S,
    pub done: bool,
    pub terminal: bool,
    pub elapsed: usize,
}

/// Fixed-capacity ring buffer with uniform sampling (with replacement).
#[derive(Debug, Clone)]
pub struct ReplayBuffer<S> {
    capacity: usize,
    items: Vec<Experience<S>>,
    next: usize,
}

impl<S: Clone> ReplayBuffer<S> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be >= 1".into()));
        }
        Ok(Self {
            capacity,
            items: Vec::new(),
            next: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, e: Experience<S>) {
        if self.items.len() < self.capacity {
            self.items.push(e);
        } else {
            self.items[self.next] = e;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn sample(&self, batch: usize, rng: &mut SimRng) -> Result<Vec<&Experience<S>>> {
        if batch == 0 || self.items.len() < batch {
            return Err(Error::Usage(format!("cannot sample {batch} from a buffer of {}", self.items.len())));
        }
        Ok((0..batch).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect())
    }
}

/// A non-empty list of dynamics parameters, each valid for the environment family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteUncertaintySet {
    params: Vec<f64>,
}

impl FiniteUncertaintySet {
    pub fn new<E: ParametricEnv>(env: &E, params: Vec<f64>) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::Config("model set must not be empty".into()));
        }
        for &p in &params {
            env.check_param(p)?;
        }
        Ok(Self { params })
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }
}

/// `Sigma+ = Sigma - (Sigma phi)(Sigma phi)^T / (1 + phi^T Sigma phi)`, for symmetric `Sigma` (row-major `d x d`).
pub fn sherman_morrison_update(sigma: &[f64], phi: &[f64]) -> Result<Vec<f64>> {
    let mut out = sigma.to_vec();
    sherman_morrison_in_place(&mut out, phi)?;
    Ok(out)
}

fn sherman_morrison_in_place(sigma: &mut [f64], phi: &[f64]) -> Result<()> {
    let d = phi.len();
    if sigma.len() != d * d {
        return Err(invalid(format!("matrix of {} entries does not match feature dimension {d}", sigma.len())));
    }
    if phi.iter().any(|x| !x.is_finite()) {
        return Err(invalid("non-finite feature vector"));
    }
    let u: Vec<f64> = sigma.chunks(d).map(|row| row.iter().zip(phi).map(|(a, b)| a * b).sum()).collect();
    let denom = 1.0 + phi.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>();
    if denom <= 0.0 || !denom.is_finite() {
        return Err(Error::NonFinite("Sherman-Morrison denominator".into()));
    }
    for i in 0..d {
        let ui = u[i];
        for (s, uj) in sigma[i * d..(i + 1) * d].iter_mut().zip(&u) {
            *s -= ui * uj / denom;
        }
    }
    Ok(())
}

fn quadratic_form(sigma: &[f64], phi: &[f64]) -> f64 {
    let d = phi.len();
    sigma.chunks(d).zip(phi).map(|(row, pi)| pi * row.iter().zip(phi).map(|(a, b)| a * b).sum::<f64>()).sum()
}

/// `beta^2 phi^T Sigma phi`.
pub fn local_uncertainty_fa(sigma: &[f64], phi: &[f64], beta: f64) -> f64 {
    beta * beta * quadratic_form(sigma, phi)
}

/// Per-action inverse feature covariances, initialised at `mu * I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaSet {
    dim: usize,
    mats: Vec<Vec<f64>>,
}

impl SigmaSet {
    pub fn new(dim: usize, num_actions: usize, mu: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) || dim == 0 || num_actions == 0 {
            return Err(invalid("SigmaSet needs mu > 0 and non-empty dimensions"));
        }
        let mut eye = vec![0.0; dim * dim];
        (0..dim).for_each(|i| eye[i * dim + i] = mu);
        Ok(Self {
            dim,
            mats: vec![eye; num_actions],
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self, action: usize) -> &[f64] {
        &self.mats[action]
    }

    pub fn update(&mut self, action: usize, phi: &[f64]) -> Result<()> {
        let m = self.mats.get_mut(action).ok_or_else(|| invalid(format!("action {action} out of range")))?;
        sherman_morrison_in_place(m, phi)
    }

    /// `phi^T Sigma_a phi`.
    pub fn quad(&self, action: usize, phi: &[f64]) -> f64 {
        quadratic_form(&self.mats[action], phi)
    }
}

/// Uncertainty-head regression target: `phi^T Sigma_a phi`, plus `gamma^2 w_next` unless the episode ended.
pub fn urbe_head_target(quad: f64, w_next: f64, gamma: f64, done: bool) -> f64 {
    if done {
        quad
    } else {
        quad + gamma * gamma * w_next
    }
}

/// `argmax_b q_b + beta zeta_b sqrt(w_b)` with `zeta_b ~ N(0, 1)` i.i.d.; ties to the lowest index.
pub fn act_thompson(q: &[f64], w: &[f64], beta: f64, rng: &mut SimRng) -> usize {
    let scores: Vec<f64> = q
        .iter()
        .zip(w)
        .map(|(q, w)| {
            let z: f64 = StandardNormal.sample(rng);
            q + beta * z * w.max(0.0).sqrt()
        })
        .collect();
    argmax(&scores)
}

/// Robust TD targets for a batch: the minimum over member models of the exact
/// expected bootstrapped value `r + gamma (1 - terminal) max_a' Q_target(s', a')`.
pub fn robust_td_targets<E: ParametricEnv>(
    env: &E,
    models: &FiniteUncertaintySet,
    batch: &[&Experience<E::State>],
    target: &TwoHeadNet,
    gamma: f64,
) -> Result<Vec<f64>> {
    // (sample, model, prob, reward, successor row or None when terminal)
    let mut outcomes = Vec::new();
    let mut feats = Vec::new();
    let mut rows = 0;
    for (i, e) in batch.iter().enumerate() {
        for (m, &param) in models.params().iter().enumerate() {
            for (p, o) in env.step_under_param(&e.state, e.action, param, e.elapsed)? {
                let row = if o.terminal {
                    None
                } else {
                    feats.extend(env.featurize(&o.next_state));
                    rows += 1;
                    Some(rows - 1)
                };
                outcomes.push((i, m, p, o.reward, row));
            }
        }
    }
    let q = if rows > 0 { target.q_values(&feats, rows)? } else { Vec::new() };
    let na = target.num_actions();
    let mut values = vec![vec![0.0; models.len()]; batch.len()];
    for (i, m, p, r, row) in outcomes {
        let boot = row.map_or(0.0, |k| q[k * na..(k + 1) * na].iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        values[i][m] += p * (r + gamma * boot);
    }
    Ok(values.into_iter().map(|v| v.into_iter().fold(f64::INFINITY, f64::min)).collect())
}

/// Robust TD target for a single transition.
pub fn robust_td_target<E: ParametricEnv>(
    env: &E,
    models: &FiniteUncertaintySet,
    state: &E::State,
    action: usize,
    elapsed: usize,
    target: &TwoHeadNet,
    gamma: f64,
) -> Result<f64> {
    let e = Experience {
        state: state.clone(),
        action,
        reward: 0.0,
        next_state: state.clone(),
        done: false,
        terminal: false,
        elapsed,
    };
    Ok(robust_td_targets(env, models, &[&e], target, gamma)?[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentKind {
    Dqn,
    RobustDqn,
    DqnUbe,
    DqnUrbe,
}

impl AgentKind {
    pub fn robust_targets(self) -> bool {
        matches!(self, AgentKind::RobustDqn | AgentKind::DqnUrbe)
    }

    pub fn uses_uncertainty(self) -> bool {
        matches!(self, AgentKind::DqnUbe | AgentKind::DqnUrbe)
    }

    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Dqn => "dqn",
            AgentKind::RobustDqn => "robust-dqn",
            AgentKind::DqnUbe => "dqn-ube",
            AgentKind::DqnUrbe => "dqn-urbe",
        }
    }
}

impl std::str::FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dqn" => Ok(AgentKind::Dqn),
            "robust-dqn" => Ok(AgentKind::RobustDqn),
            "dqn-ube" => Ok(AgentKind::DqnUbe),
            "dqn-urbe" => Ok(AgentKind::DqnUrbe),
            _ => Err(Error::Config(format!("unknown agent '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeepConfig {
    pub kind: AgentKind,
    pub gamma: f64,
    pub q_lr: f64,
    pub w_lr: f64,
    pub optimizer: OptimizerKind,
    /// Initial scale of every `Sigma_a`.
    pub mu: f64,
    pub beta: f64,
    pub batch_size: usize,
    pub initial_epsilon: f64,
    pub final_epsilon: f64,
    /// Episodes over which epsilon decays linearly.
    pub epsilon_decay_episodes: usize,
    /// Gradient updates between target-network refreshes.
    pub target_interval: u64,
    pub replay_capacity: usize,
    /// Environment steps between gradient updates.
    pub train_every: usize,
    pub hidden: Vec<usize>,
    pub w_hidden: Vec<usize>,
}

impl DeepConfig {
    pub fn mars_rover(kind: AgentKind) -> Self {
        Self {
            kind,
            gamma: 0.9,
            q_lr: 1e-4,
            w_lr: 1e-4,
            optimizer: OptimizerKind::Adam,
            mu: 1e-2,
            beta: 0.5,
            batch_size: 100,
            initial_epsilon: 1.0,
            final_epsilon: 1e-3,
            epsilon_decay_episodes: 1000,
            target_interval: 10,
            replay_capacity: 50_000,
            train_every: 1,
            hidden: vec![10, 10],
            w_hidden: vec![15],
        }
    }

    pub fn cart_pole(kind: AgentKind) -> Self {
        Self {
            batch_size: 256,
            final_epsilon: 1e-5,
            epsilon_decay_episodes: 1300,
            hidden: vec![128, 128, 128],
            w_hidden: vec![100],
            ..Self::mars_rover(kind)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must be in (0, 1]");
        }
        if !(self.q_lr > 0.0 && self.w_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.mu.is_nan() || self.mu <= 0.0 || self.beta.is_nan() || self.beta < 0.0 {
            return bad("mu must be positive and beta non-negative");
        }
        if self.batch_size == 0 || self.target_interval == 0 || self.train_every == 0 {
            return bad("batch_size, target_interval and train_every must be >= 1");
        }
        if self.replay_capacity < self.batch_size {
            return bad("replay_capacity must be at least batch_size");
        }
        if !(0.0..=1.0).contains(&self.initial_epsilon) || !(0.0..=1.0).contains(&self.final_epsilon) {
            return bad("epsilon values must be in [0, 1]");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) || self.w_hidden.contains(&0) {
            return bad("hidden layer sizes must be positive and the Q-network needs one hidden layer");
        }
        Ok(())
    }
}

/// Return of one test episode and the `(state, action)` pairs it visited.
pub type TestRollout<S> = (f64, Vec<(S, usize)>);

/// How actions are chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActMode {
    /// Epsilon-greedy around the agent's behaviour rule.
    Train,
    /// No epsilon; `bonus` keeps the uncertainty-driven perturbation for UBE/URBE.
    Eval { bonus: bool },
}

/// Per-episode training summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub length: usize,
    pub epsilon: f64,
    pub q_loss: f64,
    pub w_loss: f64,
    pub mean_w_start: f64,
    pub param: f64,
    pub updates: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointState {
    version: u32,
    config: DeepConfig,
    models: FiniteUncertaintySet,
    sigma: SigmaSet,
    episodes: usize,
    env_steps: u64,
    updates: u64,
    target_refreshes: u64,
}

pub struct DeepAgent<S> {
    config: DeepConfig,
    net: TwoHeadNet,
    target: TwoHeadNet,
    q_opt: Optimizer,
    w_opt: Optimizer,
    sigma: SigmaSet,
    models: FiniteUncertaintySet,
    replay: ReplayBuffer<S>,
    episodes: usize,
    env_steps: u64,
    updates: u64,
    target_refreshes: u64,
}

impl<S: Clone + std::fmt::Debug> DeepAgent<S> {
    pub fn new<E: ParametricEnv<State = S>>(env: &E, config: DeepConfig, models: FiniteUncertaintySet, rng: &mut SimRng) -> Result<Self> {
        config.validate()?;
        let mut net = TwoHeadNet::new(env.feature_dim(), &config.hidden, env.num_actions(), &config.w_hidden, rng)?;
        net.reset_w_output(config.mu);
        Self::from_parts(config, net, models, None)
    }

    fn from_parts(config: DeepConfig, net: TwoHeadNet, models: FiniteUncertaintySet, sigma: Option<SigmaSet>) -> Result<Self> {
        let sigma = match sigma {
            Some(s) => s,
            None => SigmaSet::new(net.feature_dim(), net.num_actions(), config.mu)?,
        };
        Ok(Self {
            q_opt: Optimizer::new(config.optimizer, config.q_lr, net.q_net().num_params()),
            w_opt: Optimizer::new(config.optimizer, config.w_lr, net.w_net().num_params()),
            target: net.target_copy(),
            replay: ReplayBuffer::new(config.replay_capacity)?,
            net,
            sigma,
            models,
            config,
            episodes: 0,
            env_steps: 0,
            updates: 0,
            target_refreshes: 0,
        })
    }

    pub fn config(&self) -> &DeepConfig {
        &self.config
    }

    pub fn net(&self) -> &TwoHeadNet {
        &self.net
    }

    pub fn target(&self) -> &TwoHeadNet {
        &self.target
    }

    pub fn sigma(&self) -> &SigmaSet {
        &self.sigma
    }

    pub fn models(&self) -> &FiniteUncertaintySet {
        &self.models
    }

    pub fn episodes(&self) -> usize {
        self.episodes
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn target_refreshes(&self) -> u64 {
        self.target_refreshes
    }

    pub fn replay(&self) -> &ReplayBuffer<S> {
        &self.replay
    }

    /// Linearly annealed exploration rate for the current episode.
    pub fn epsilon(&self) -> f64 {
        let c = &self.config;
        if c.epsilon_decay_episodes == 0 {
            return c.final_epsilon;
        }
        if self.episodes >= c.epsilon_decay_episodes {
            return c.final_epsilon;
        }
        let frac = self.episodes as f64 / c.epsilon_decay_episodes as f64;
        c.initial_epsilon + frac * (c.final_epsilon - c.initial_epsilon)
    }

    pub fn act<E: ParametricEnv<State = S>>(&self, env: &E, state: &S, mode: ActMode, rng: &mut SimRng) -> Result<(usize, HeadsOutput)> {
        let out = self.net.forward(&env.featurize(state))?;
        let bonus = match mode {
            ActMode::Train => {
                if rng.random::<f64>() < self.epsilon() {
                    return Ok((rng.random_range(0..env.num_actions()), out));
                }
                true
            }
            ActMode::Eval { bonus } => bonus,
        };
        let a = if bonus && self.config.kind.uses_uncertainty() {
            act_thompson(&out.q, &out.w, self.config.beta, rng)
        } else {
            argmax(&out.q)
        };
        Ok((a, out))
    }

    /// One gradient update of the Q-network (and the uncertainty head for UBE/URBE).
    /// Returns `(q_loss, w_loss)`; `None` while the buffer is smaller than a batch.
    pub fn train_step<E: ParametricEnv<State = S>>(&mut self, env: &E, rng: &mut SimRng) -> Result<Option<(f64, f64)>> {
        let bs = self.config.batch_size;
        if self.replay.len() < bs {
            return Ok(None);
        }
        let gamma = self.config.gamma;
        let batch = self.replay.sample(bs, rng)?;
        let actions: Vec<usize> = batch.iter().map(|e| e.action).collect();
        let mut x = Vec::with_capacity(bs * env.feature_dim());
        let mut x_next = Vec::with_capacity(bs * env.feature_dim());
        for e in &batch {
            x.extend(env.featurize(&e.state));
            x_next.extend(env.featurize(&e.next_state));
        }
        let (q_next, phi_next) = self.target.q_and_features(&x_next, bs)?;
        let na = self.net.num_actions();
        let targets = if self.config.kind.robust_targets() {
            robust_td_targets(env, &self.models, &batch, &self.target, gamma)?
        } else {
            batch
                .iter()
                .enumerate()
                .map(|(i, e)| {
                    let boot = if e.terminal { 0.0 } else { q_next[i * na..(i + 1) * na].iter().cloned().fold(f64::NEG_INFINITY, f64::max) };
                    e.reward + gamma * boot
                })
                .collect()
        };

        let mut w_loss = 0.0;
        if self.config.kind.uses_uncertainty() {
            let (_, phi) = self.net.q_and_features(&x, bs)?;
            let w_next = self.target.w_values(&phi_next, bs)?;
            let d = self.net.feature_dim();
            let w_targets: Vec<f64> = batch
                .iter()
                .enumerate()
                .map(|(i, e)| {
                    let next = argmax(&q_next[i * na..(i + 1) * na]);
                    let quad = self.sigma.quad(e.action, &phi[i * d..(i + 1) * d]);
                    urbe_head_target(quad, w_next[i * na + next], gamma, e.done)
                })
                .collect();
            w_loss = self.net.w_step(&mut self.w_opt, &phi, &actions, &w_targets)?;
        }
        let q_loss = self.net.q_step(&mut self.q_opt, &x, &actions, &targets)?;

        self.updates += 1;
        if self.updates.is_multiple_of(self.config.target_interval) {
            self.target = self.net.target_copy();
            self.target_refreshes += 1;
        }
        Ok(Some((q_loss, w_loss)))
    }

    /// Runs one training episode on `env`.
    pub fn train_episode<E: ParametricEnv<State = S>>(&mut self, env: &mut E, rng: &mut SimRng) -> Result<EpisodeMetrics> {
        let epsilon = self.epsilon();
        let mut state = env.reset(rng);
        let start = self.net.forward(&env.featurize(&state))?;
        let mean_w_start = start.w.iter().sum::<f64>() / start.w.len() as f64;
        let (mut ret, mut len, mut ql, mut wl, mut n_upd) = (0.0, 0, 0.0, 0.0, 0u64);
        for elapsed in 0..env.horizon() {
            let (action, out) = self.act(env, &state, ActMode::Train, rng)?;
            let step = env.step(action, rng)?;
            if self.config.kind.uses_uncertainty() {
                self.sigma.update(action, &out.phi)?;
            }
            self.replay.push(Experience {
                state: state.clone(),
                action,
                reward: step.reward,
                next_state: step.next_state.clone(),
                done: step.done,
                terminal: step.terminal,
                elapsed,
            });
            self.env_steps += 1;
            ret += step.reward;
            len += 1;
            if self.env_steps.is_multiple_of(self.config.train_every as u64) {
                if let Some((q, w)) = self.train_step(env, rng)? {
                    ql += q;
                    wl += w;
                    n_upd += 1;
                }
            }
            state = step.next_state;
            if step.done {
                break;
            }
        }
        let metrics = EpisodeMetrics {
            episode: self.episodes,
            episode_return: ret,
            length: len,
            epsilon,
            q_loss: if n_upd > 0 { ql / n_upd as f64 } else { 0.0 },
            w_loss: if n_upd > 0 { wl / n_upd as f64 } else { 0.0 },
            mean_w_start,
            param: env.param(),
            updates: self.updates,
        };
        self.episodes += 1;
        Ok(metrics)
    }

    /// Test rollouts without learning. Returns `(return, visited states)` per episode.
    pub fn evaluate<E: ParametricEnv<State = S>>(&self, env: &mut E, episodes: usize, bonus: bool, rng: &mut SimRng) -> Result<Vec<TestRollout<S>>> {
        let mut out = Vec::with_capacity(episodes);
        for _ in 0..episodes {
            let mut state = env.reset(rng);
            let mut ret = 0.0;
            let mut visits = Vec::new();
            for _ in 0..env.horizon() {
                let (a, _) = self.act(env, &state, ActMode::Eval { bonus }, rng)?;
                visits.push((state.clone(), a));
                let step = env.step(a, rng)?;
                ret += step.reward;
                state = step.next_state;
                if step.done {
                    break;
                }
            }
            visits.push((state, usize::MAX));
            out.push((ret, visits));
        }
        Ok(out)
    }

    /// Writes `net.bin`, `target.bin` and `state.json` into `dir`.
    ///
    /// Optimizer moments and the replay buffer are not persisted.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.net.save(&dir.join("net.bin"))?;
        self.target.save(&dir.join("target.bin"))?;
        let state = CheckpointState {
            version: 1,
            config: self.config.clone(),
            models: self.models.clone(),
            sigma: self.sigma.clone(),
            episodes: self.episodes,
            env_steps: self.env_steps,
            updates: self.updates,
            target_refreshes: self.target_refreshes,
        };
        std::fs::write(dir.join("state.json"), serde_json::to_vec(&state)?)?;
        Ok(())
    }

    pub fn load_checkpoint<E: ParametricEnv<State = S>>(env: &E, dir: &Path) -> Result<Self> {
        let read = |name: &str| std::fs::read(dir.join(name)).map_err(|e| Error::Checkpoint(format!("{}: {e}", dir.join(name).display())));
        let state: CheckpointState = serde_json::from_slice(&read("state.json")?).map_err(|e| Error::Checkpoint(format!("state.json: {e}")))?;
        if state.version != 1 {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {}", state.version)));
        }
        let net = TwoHeadNet::from_bytes(&read("net.bin")?)?;
        let target = TwoHeadNet::from_bytes(&read("target.bin")?)?;
        if net.input_dim() != env.feature_dim() || net.num_actions() != env.num_actions() {
            return Err(Error::Checkpoint("checkpoint does not match the environment".into()));
        }
        if state.sigma.dim() != net.feature_dim() {
            return Err(Error::Checkpoint("covariance dimension does not match the network".into()));
        }
        for &p in state.models.params() {
            env.check_param(p)?;
        }
        state.config.validate()?;
        let mut agent = Self::from_parts(state.config, net, state.models, Some(state.sigma))?;
        agent.target = target;
        agent.episodes = state.episodes;
        agent.env_steps = state.env_steps;
        agent.updates = state.updates;
        agent.target_refreshes = state.target_refreshes;
        Ok(agent)
    }
}
