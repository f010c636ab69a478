//! Benchmark environments with parameterised dynamics.
//!
//! Every environment can step under an arbitrary member of its model family
//! (`step_under_param`), which robust TD targets rely on. The regular `step`
//! samples from that same distribution under the current parameter.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mdp::{Environment, FiniteRmdp, SimRng, StepOutcome};

/// A finite, enumerable distribution over step outcomes.
pub type OutcomeDistribution<S> = Vec<(f64, StepOutcome<S>)>;

/// An environment family indexed by one scalar dynamics parameter.
pub trait ParametricEnv: Environment {
    /// Name of the dynamics parameter, as used in schedules and configs.
    fn param_name(&self) -> &'static str;
    fn param(&self) -> f64;
    fn check_param(&self, value: f64) -> Result<()>;
    fn set_param(&mut self, value: f64) -> Result<()> {
        self.check_param(value)?;
        self.set_param_unchecked(value);
        Ok(())
    }
    #[doc(hidden)]
    fn set_param_unchecked(&mut self, value: f64);

    /// Exact successor distribution of `(state, action)` under `param`.
    ///
    /// `elapsed` is the number of steps already taken in the episode; the
    /// returned outcomes set `done` (but not `terminal`) at the time limit.
    fn step_under_param(&self, state: &Self::State, action: usize, param: f64, elapsed: usize) -> Result<OutcomeDistribution<Self::State>>;

    fn feature_dim(&self) -> usize;
    fn featurize(&self, state: &Self::State) -> Vec<f64>;
}

fn sample_outcome<S: Clone>(dist: &OutcomeDistribution<S>, rng: &mut SimRng) -> StepOutcome<S> {
    if dist.len() == 1 {
        return dist[0].1.clone();
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (p, o) in dist {
        acc += p;
        if u < acc {
            return o.clone();
        }
    }
    dist.last().expect("non-empty distribution").1.clone()
}

// ---------------------------------------------------------------------------
// Simple MDP

/// Seven-state MDP: from `s0`, action 0 reaches `s1` deterministically
/// (reward 0.14); actions 1..3 lead to `s2`, `s4`, `s5`, from which any action
/// reaches `s3` (reward 1) with probability `p_s3`, else `s6` (reward 0).
#[derive(Debug, Clone)]
pub struct SimpleMdpEnv {
    p_s3: f64,
    state: usize,
    done: bool,
}

impl SimpleMdpEnv {
    pub const NUM_STATES: usize = 7;
    pub const NUM_ACTIONS: usize = 4;
    pub const HORIZON: usize = 2;
    pub const REWARD_MINIMAX: f64 = 0.14;
    pub const REWARD_GOOD: f64 = 1.0;
    pub const REWARD_BAD: f64 = 0.0;
    pub const START: usize = 0;
    pub const S1: usize = 1;
    pub const S3: usize = 3;
    pub const S6: usize = 6;
    const BRANCHES: [usize; 3] = [2, 4, 5];

    pub fn new(p_s3: f64) -> Result<Self> {
        let mut env = Self {
            p_s3: 0.0,
            state: Self::START,
            done: false,
        };
        env.set_param(p_s3)?;
        Ok(env)
    }

    fn is_branch(s: usize) -> bool {
        Self::BRANCHES.contains(&s)
    }

    pub fn is_terminal_state(s: usize) -> bool {
        matches!(s, Self::S1 | Self::S3 | Self::S6)
    }

    /// The known reward structure as a finite RMDP (entry rewards on `s1`, `s3`, `s6`).
    pub fn model(gamma: f64) -> Result<FiniteRmdp> {
        FiniteRmdp::new(Self::NUM_STATES, Self::NUM_ACTIONS, Self::HORIZON, gamma, vec![0.0; 28])?
            .with_terminal(Self::S1, Self::REWARD_MINIMAX)?
            .with_terminal(Self::S3, Self::REWARD_GOOD)?
            .with_terminal(Self::S6, Self::REWARD_BAD)
    }

    /// Successors that can occur from `(s, a)`; terminal states map to themselves.
    pub fn successor_support(s: usize, a: usize) -> Vec<usize> {
        match s {
            Self::START => vec![[Self::S1, 2, 4, 5][a]],
            s if Self::is_branch(s) => vec![Self::S3, Self::S6],
            s => vec![s],
        }
    }
}

impl Environment for SimpleMdpEnv {
    type State = usize;

    fn num_actions(&self) -> usize {
        Self::NUM_ACTIONS
    }

    fn horizon(&self) -> usize {
        Self::HORIZON
    }

    fn reset(&mut self, _rng: &mut SimRng) -> usize {
        self.state = Self::START;
        self.done = false;
        self.state
    }

    fn step(&mut self, action: usize, rng: &mut SimRng) -> Result<StepOutcome<usize>> {
        if self.done {
            return Err(Error::Usage("step called on a finished episode".into()));
        }
        let dist = self.step_under_param(&self.state, action, self.p_s3, 0)?;
        let out = sample_outcome(&dist, rng);
        self.state = out.next_state;
        self.done = out.done;
        Ok(out)
    }
}

impl ParametricEnv for SimpleMdpEnv {
    fn param_name(&self) -> &'static str {
        "p_s3"
    }

    fn param(&self) -> f64 {
        self.p_s3
    }

    fn check_param(&self, value: f64) -> Result<()> {
        if (0.0..=1.0).contains(&value) {
            Ok(())
        } else {
            Err(Error::Config(format!("p_s3 = {value} outside [0, 1]")))
        }
    }

    fn set_param_unchecked(&mut self, value: f64) {
        self.p_s3 = value;
    }

    fn step_under_param(&self, state: &usize, action: usize, param: f64, _elapsed: usize) -> Result<OutcomeDistribution<usize>> {
        self.check_param(param)?;
        if action >= Self::NUM_ACTIONS {
            return Err(invalid(format!("action {action} out of range")));
        }
        let done = |s: usize, r: f64| StepOutcome {
            next_state: s,
            reward: r,
            done: true,
            terminal: true,
        };
        match *state {
            Self::START if action == 0 => Ok(vec![(1.0, done(Self::S1, Self::REWARD_MINIMAX))]),
            Self::START => Ok(vec![(
                1.0,
                StepOutcome {
                    next_state: Self::BRANCHES[action - 1],
                    reward: 0.0,
                    done: false,
                    terminal: false,
                },
            )]),
            s if Self::is_branch(s) => {
                let mut dist = Vec::with_capacity(2);
                if param > 0.0 {
                    dist.push((param, done(Self::S3, Self::REWARD_GOOD)));
                }
                if param < 1.0 {
                    dist.push((1.0 - param, done(Self::S6, Self::REWARD_BAD)));
                }
                Ok(dist)
            }
            s => Err(invalid(format!("state {s} is terminal or unknown"))),
        }
    }

    fn feature_dim(&self) -> usize {
        Self::NUM_STATES
    }

    fn featurize(&self, state: &usize) -> Vec<f64> {
        one_hot(*state, Self::NUM_STATES)
    }
}

/// Tabular environments expose their reward structure and successor support,
/// which is what a Dirichlet-posterior agent is given up front.
pub trait TabularEnv: ParametricEnv<State = usize> {
    fn num_states(&self) -> usize;
    fn tabular_model(&self, gamma: f64) -> Result<FiniteRmdp>;
    fn successor_support(&self, s: usize, a: usize) -> Vec<usize>;
}

impl TabularEnv for SimpleMdpEnv {
    fn num_states(&self) -> usize {
        Self::NUM_STATES
    }

    fn tabular_model(&self, gamma: f64) -> Result<FiniteRmdp> {
        Self::model(gamma)
    }

    fn successor_support(&self, s: usize, a: usize) -> Vec<usize> {
        Self::successor_support(s, a)
    }
}

fn one_hot(i: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

// ---------------------------------------------------------------------------
// Mars Rover

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarsRoverConfig {
    pub fail_prob: f64,
    pub reward_success: f64,
    pub reward_fail: f64,
    pub reward_step: f64,
    pub horizon: usize,
}

impl Default for MarsRoverConfig {
    fn default() -> Self {
        Self {
            fail_prob: 0.005,
            reward_success: 1.0,
            reward_fail: -1.0,
            reward_step: -0.01,
            horizon: 200,
        }
    }
}

/// Rover position: a grid cell, or the absorbing failure state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RoverState {
    Cell { row: usize, col: usize },
    Failed,
}

/// 10x10 grid; the rover starts in the top-left 3x3 zone and must reach the
/// bottom-right corner. A move that strictly decreases the Manhattan distance
/// to the goal fails (terminal, `reward_fail`) with probability `fail_prob`.
///
/// Actions: 0 up, 1 down, 2 left, 3 right. Moves into a wall leave the rover in place.
#[derive(Debug, Clone)]
pub struct MarsRoverEnv {
    config: MarsRoverConfig,
    state: RoverState,
    elapsed: usize,
    done: bool,
}

impl MarsRoverEnv {
    pub const SIZE: usize = 10;
    pub const START_ZONE: usize = 3;
    pub const GOAL: (usize, usize) = (Self::SIZE - 1, Self::SIZE - 1);

    pub fn new(config: MarsRoverConfig) -> Result<Self> {
        if config.horizon == 0 {
            return Err(Error::Config("mars rover horizon must be >= 1".into()));
        }
        let env = Self {
            config,
            state: RoverState::Cell { row: 0, col: 0 },
            elapsed: 0,
            done: false,
        };
        env.check_param(config.fail_prob)?;
        Ok(env)
    }

    pub fn config(&self) -> &MarsRoverConfig {
        &self.config
    }

    pub fn distance_to_goal(row: usize, col: usize) -> usize {
        (Self::GOAL.0 - row) + (Self::GOAL.1 - col)
    }

    pub fn moved(row: usize, col: usize, action: usize) -> (usize, usize) {
        match action {
            0 => (row.saturating_sub(1), col),
            1 => ((row + 1).min(Self::SIZE - 1), col),
            2 => (row, col.saturating_sub(1)),
            _ => (row, (col + 1).min(Self::SIZE - 1)),
        }
    }

    pub fn is_goalward(row: usize, col: usize, action: usize) -> bool {
        let (r, c) = Self::moved(row, col, action);
        Self::distance_to_goal(r, c) < Self::distance_to_goal(row, col)
    }

    /// Index into a row-major 10x10 grid, for heatmaps.
    pub fn cell_index(state: &RoverState) -> Option<usize> {
        match *state {
            RoverState::Cell { row, col } => Some(row * Self::SIZE + col),
            RoverState::Failed => None,
        }
    }

    /// Place the rover at a specific cell (for tests and heatmap probes).
    pub fn place(&mut self, row: usize, col: usize) {
        self.state = RoverState::Cell { row, col };
        self.elapsed = 0;
        self.done = false;
    }
}

impl Environment for MarsRoverEnv {
    type State = RoverState;

    fn num_actions(&self) -> usize {
        4
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn reset(&mut self, rng: &mut SimRng) -> RoverState {
        let row = rng.random_range(0..Self::START_ZONE);
        let col = rng.random_range(0..Self::START_ZONE);
        self.place(row, col);
        self.state
    }

    fn step(&mut self, action: usize, rng: &mut SimRng) -> Result<StepOutcome<RoverState>> {
        if self.done {
            return Err(Error::Usage("step called on a finished episode".into()));
        }
        let dist = self.step_under_param(&self.state, action, self.config.fail_prob, self.elapsed)?;
        let out = sample_outcome(&dist, rng);
        self.elapsed += 1;
        self.state = out.next_state;
        self.done = out.done;
        Ok(out)
    }
}

impl ParametricEnv for MarsRoverEnv {
    fn param_name(&self) -> &'static str {
        "fail_prob"
    }

    fn param(&self) -> f64 {
        self.config.fail_prob
    }

    fn check_param(&self, value: f64) -> Result<()> {
        if (0.0..=1.0).contains(&value) {
            Ok(())
        } else {
            Err(Error::Config(format!("fail_prob = {value} outside [0, 1]")))
        }
    }

    fn set_param_unchecked(&mut self, value: f64) {
        self.config.fail_prob = value;
    }

    fn step_under_param(&self, state: &RoverState, action: usize, param: f64, elapsed: usize) -> Result<OutcomeDistribution<RoverState>> {
        self.check_param(param)?;
        if action >= 4 {
            return Err(invalid(format!("action {action} out of range")));
        }
        let (row, col) = match *state {
            RoverState::Cell { row, col } if (row, col) != Self::GOAL => (row, col),
            _ => return Err(invalid("no transitions out of a terminal rover state")),
        };
        let timeout = elapsed + 1 >= self.config.horizon;
        let (r2, c2) = Self::moved(row, col, action);
        let reached = (r2, c2) == Self::GOAL;
        let moved = StepOutcome {
            next_state: RoverState::Cell { row: r2, col: c2 },
            reward: if reached { self.config.reward_success } else { self.config.reward_step },
            done: reached || timeout,
            terminal: reached,
        };
        if !Self::is_goalward(row, col, action) || param == 0.0 {
            return Ok(vec![(1.0, moved)]);
        }
        let failed = StepOutcome {
            next_state: RoverState::Failed,
            reward: self.config.reward_fail,
            done: true,
            terminal: true,
        };
        if param == 1.0 {
            return Ok(vec![(1.0, failed)]);
        }
        Ok(vec![(param, failed), (1.0 - param, moved)])
    }

    fn feature_dim(&self) -> usize {
        Self::SIZE * Self::SIZE + 1
    }

    /// One-hot over the 100 cells plus a final slot for the failure state.
    fn featurize(&self, state: &RoverState) -> Vec<f64> {
        let n = self.feature_dim();
        one_hot(Self::cell_index(state).unwrap_or(n - 1), n)
    }
}

// ---------------------------------------------------------------------------
// Cart-pole

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartPoleConfig {
    /// Pole half-length.
    pub pole_length: f64,
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub force: f64,
    pub dt: f64,
    pub theta_limit: f64,
    pub x_limit: f64,
    pub horizon: usize,
}

impl Default for CartPoleConfig {
    fn default() -> Self {
        Self {
            pole_length: 0.75,
            gravity: 9.8,
            cart_mass: 1.0,
            pole_mass: 0.1,
            force: 10.0,
            dt: 0.02,
            theta_limit: 12.0 * std::f64::consts::PI / 180.0,
            x_limit: 2.4,
            horizon: 200,
        }
    }
}

/// `[x, x_dot, theta, theta_dot]`.
pub type CartPoleState = [f64; 4];

/// Classic cart-pole with explicit Euler integration. Action 0 pushes left,
/// action 1 pushes right. Reward 1 per surviving step, 0 on the failing step.
#[derive(Debug, Clone)]
pub struct CartPoleEnv {
    config: CartPoleConfig,
    state: CartPoleState,
    elapsed: usize,
    done: bool,
}

/// Feature scaling to roughly unit range.
const CARTPOLE_SCALE: [f64; 4] = [2.4, 3.0, 0.21, 3.5];

impl CartPoleEnv {
    pub fn new(config: CartPoleConfig) -> Result<Self> {
        if !(config.dt > 0.0 && config.cart_mass > 0.0 && config.pole_mass > 0.0 && config.horizon > 0) {
            return Err(Error::Config("cart-pole constants must be positive".into()));
        }
        let env = Self {
            config,
            state: [0.0; 4],
            elapsed: 0,
            done: false,
        };
        env.check_param(config.pole_length)?;
        Ok(env)
    }

    pub fn config(&self) -> &CartPoleConfig {
        &self.config
    }

    /// One Euler step of the cart-pole equations with the given half-length.
    pub fn integrate(config: &CartPoleConfig, state: &CartPoleState, action: usize, length: f64) -> CartPoleState {
        let [x, x_dot, theta, theta_dot] = *state;
        let force = if action == 1 { config.force } else { -config.force };
        let total_mass = config.cart_mass + config.pole_mass;
        let polemass_length = config.pole_mass * length;
        let (sin, cos) = theta.sin_cos();
        let temp = (force + polemass_length * theta_dot * theta_dot * sin) / total_mass;
        let theta_acc = (config.gravity * sin - cos * temp) / (length * (4.0 / 3.0 - config.pole_mass * cos * cos / total_mass));
        let x_acc = temp - polemass_length * theta_acc * cos / total_mass;
        [
            x + config.dt * x_dot,
            x_dot + config.dt * x_acc,
            theta + config.dt * theta_dot,
            theta_dot + config.dt * theta_acc,
        ]
    }

    pub fn failed(config: &CartPoleConfig, state: &CartPoleState) -> bool {
        state[0].abs() > config.x_limit || state[2].abs() > config.theta_limit
    }

    /// Place the cart at a specific state (for tests and probes).
    pub fn place(&mut self, state: CartPoleState) {
        self.state = state;
        self.elapsed = 0;
        self.done = false;
    }
}

impl Environment for CartPoleEnv {
    type State = CartPoleState;

    fn num_actions(&self) -> usize {
        2
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn reset(&mut self, rng: &mut SimRng) -> CartPoleState {
        let state = [
            rng.random_range(-0.05..0.05),
            rng.random_range(-0.05..0.05),
            rng.random_range(-0.05..0.05),
            rng.random_range(-0.05..0.05),
        ];
        self.place(state);
        state
    }

    fn step(&mut self, action: usize, rng: &mut SimRng) -> Result<StepOutcome<CartPoleState>> {
        if self.done {
            return Err(Error::Usage("step called on a finished episode".into()));
        }
        let dist = self.step_under_param(&self.state, action, self.config.pole_length, self.elapsed)?;
        let out = sample_outcome(&dist, rng);
        self.elapsed += 1;
        self.state = out.next_state;
        self.done = out.done;
        Ok(out)
    }
}

impl ParametricEnv for CartPoleEnv {
    fn param_name(&self) -> &'static str {
        "pole_length"
    }

    fn param(&self) -> f64 {
        self.config.pole_length
    }

    fn check_param(&self, value: f64) -> Result<()> {
        if value > 0.0 && value.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!("pole_length = {value} must be positive")))
        }
    }

    fn set_param_unchecked(&mut self, value: f64) {
        self.config.pole_length = value;
    }

    fn step_under_param(&self, state: &CartPoleState, action: usize, param: f64, elapsed: usize) -> Result<OutcomeDistribution<CartPoleState>> {
        self.check_param(param)?;
        if action >= 2 {
            return Err(invalid(format!("action {action} out of range")));
        }
        if state.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("cart-pole state".into()));
        }
        let next = Self::integrate(&self.config, state, action, param);
        let failed = Self::failed(&self.config, &next);
        Ok(vec![(
            1.0,
            StepOutcome {
                next_state: next,
                reward: if failed { 0.0 } else { 1.0 },
                done: failed || elapsed + 1 >= self.config.horizon,
                terminal: failed,
            },
        )])
    }

    fn feature_dim(&self) -> usize {
        4
    }

    fn featurize(&self, state: &CartPoleState) -> Vec<f64> {
        state.iter().zip(CARTPOLE_SCALE).map(|(x, s)| x / s).collect()
    }
}

// ---------------------------------------------------------------------------
// Model sets and schedules

/// Environment families with a scalar dynamics parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvKind {
    Simple,
    MarsRover,
    CartPole,
}

impl EnvKind {
    pub fn param_name(self) -> &'static str {
        match self {
            EnvKind::Simple => "p_s3",
            EnvKind::MarsRover => "fail_prob",
            EnvKind::CartPole => "pole_length",
        }
    }
}

/// Lower clamp for sampled pole lengths.
pub const MIN_SAMPLED_POLE_LENGTH: f64 = 0.05;

/// Draws the finite model set: fail probabilities uniform in (0, 1) for the
/// rover, pole lengths from `N(nominal, std)` clamped positive for cart-pole.
pub fn sample_model_params(kind: EnvKind, count: usize, nominal: f64, length_std: f64, rng: &mut SimRng) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(Error::Config("model set must not be empty".into()));
    }
    match kind {
        EnvKind::MarsRover | EnvKind::Simple => Ok((0..count)
            .map(|_| loop {
                let p: f64 = rng.random();
                if p > 0.0 {
                    break p;
                }
            })
            .collect()),
        EnvKind::CartPole => {
            let normal = Normal::new(nominal, length_std).map_err(|e| Error::Config(e.to_string()))?;
            Ok((0..count).map(|_| normal.sample(rng).max(MIN_SAMPLED_POLE_LENGTH)).collect())
        }
    }
}

/// Piecewise-constant parameter schedule: `(episode, value)` switch points.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSchedule {
    pub param: String,
    pub points: Vec<(usize, f64)>,
}

impl ParamSchedule {
    pub fn new(param: impl Into<String>, points: Vec<(usize, f64)>) -> Result<Self> {
        if points.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Config("schedule episodes must be strictly increasing".into()));
        }
        Ok(Self {
            param: param.into(),
            points,
        })
    }

    /// Equal-length regimes over `episodes`, one per value.
    pub fn evenly_spaced(param: impl Into<String>, values: &[f64], episodes: usize) -> Result<Self> {
        let n = values.len().max(1);
        Self::new(param, values.iter().enumerate().map(|(i, &v)| (i * episodes / n, v)).collect())
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The value switched to at exactly `episode`, if any.
    pub fn switch_at(&self, episode: usize) -> Option<f64> {
        self.points.iter().find(|(e, _)| *e == episode).map(|(_, v)| *v)
    }

    /// The value in force during `episode`, if the schedule has started.
    pub fn value_at(&self, episode: usize) -> Option<f64> {
        self.points.iter().take_while(|(e, _)| *e <= episode).last().map(|(_, v)| *v)
    }
}

/// A recorded parameter switch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwitchEvent {
    pub episode: usize,
    pub param: String,
    pub value: f64,
}

/// Applies the schedule entry for `episode` (if any) to `env`.
pub fn adversarial_schedule<E: ParametricEnv>(env: &mut E, schedule: &ParamSchedule, episode: usize) -> Result<Option<SwitchEvent>> {
    if schedule.is_empty() {
        return Ok(None);
    }
    if schedule.param != env.param_name() {
        return Err(Error::Config(format!(
            "schedule names parameter '{}' but the environment has '{}'",
            schedule.param,
            env.param_name()
        )));
    }
    match schedule.switch_at(episode) {
        Some(value) => {
            env.set_param(value)?;
            log::info!("episode {episode}: {} -> {value}", schedule.param);
            Ok(Some(SwitchEvent {
                episode,
                param: schedule.param.clone(),
                value,
            }))
        }
        None => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{rollout, validate_simplex, SIMPLEX_TOL};
    use rand::SeedableRng;

    fn rng(seed: u64) -> SimRng {
        SimRng::seed_from_u64(seed)
    }

    #[test]
    fn simple_mdp_dynamics() {
        let mut env = SimpleMdpEnv::new(0.5).unwrap();
        let mut r = rng(0);
        assert_eq!(env.reset(&mut r), 0);
        let out = env.step(0, &mut r).unwrap();
        assert_eq!((out.next_state, out.reward, out.done), (1, 0.14, true));
        assert!(env.step(0, &mut r).is_err());

        let mut sure = SimpleMdpEnv::new(1.0).unwrap();
        sure.reset(&mut r);
        sure.step(1, &mut r).unwrap();
        let out = sure.step(2, &mut r).unwrap();
        assert_eq!((out.next_state, out.reward, out.done), (3, 1.0, true));
        for p in [0.0, 0.3, 1.0] {
            for a in 0..4 {
                let d = env.step_under_param(&0, 0, p, 0).unwrap();
                assert_eq!(d.len(), 1);
                assert_eq!(d[0].1.next_state, 1);
                let probs: Vec<f64> = env.step_under_param(&2, a, p, 0).unwrap().iter().map(|x| x.0).collect();
                assert!(validate_simplex(&probs, SIMPLEX_TOL));
            }
        }
        assert!(SimpleMdpEnv::new(1.5).is_err());
    }

    #[test]
    fn simple_mdp_always_minimax_earns_014() {
        let mut env = SimpleMdpEnv::new(0.3).unwrap();
        for seed in 0..5 {
            let log = rollout(&mut env, |_, _, _| Ok(0), 1.0, &mut rng(seed)).unwrap();
            assert_eq!(log.undiscounted_return(), 0.14);
            assert_eq!(log.len(), 1);
        }
    }

    #[test]
    fn simple_mdp_episodes_are_short() {
        let mut env = SimpleMdpEnv::new(0.5).unwrap();
        let mut r = rng(1);
        for a in 0..4 {
            let log = rollout(&mut env, |_, _, _| Ok(a), 1.0, &mut r).unwrap();
            assert!(log.len() <= 2);
        }
    }

    #[test]
    fn rover_outcomes() {
        let env = MarsRoverEnv::new(MarsRoverConfig::default()).unwrap();
        let s = RoverState::Cell { row: 4, col: 4 };
        let d = env.step_under_param(&s, 3, 0.2, 0).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d[0].0, 0.2);
        assert_eq!(d[1].0, 0.8);
        assert_eq!(d[0].1.next_state, RoverState::Failed);
        assert_eq!(d[1].1.next_state, RoverState::Cell { row: 4, col: 5 });
        // Moving away is never risky.
        let d = env.step_under_param(&s, 0, 0.9, 0).unwrap();
        assert_eq!(d.len(), 1);
        // Wall bump is not goalward.
        assert!(!MarsRoverEnv::is_goalward(9, 9 - 1, 1));
        assert!(env.step_under_param(&RoverState::Failed, 0, 0.2, 0).is_err());
    }

    #[test]
    fn rover_goalward_policy_reaches_goal_within_manhattan_bound() {
        let mut env = MarsRoverEnv::new(MarsRoverConfig {
            fail_prob: 0.0,
            ..Default::default()
        })
        .unwrap();
        let mut r = rng(0);
        for row in 0..MarsRoverEnv::START_ZONE {
            for col in 0..MarsRoverEnv::START_ZONE {
                env.place(row, col);
                let mut state = RoverState::Cell { row, col };
                let mut steps = 0;
                loop {
                    let RoverState::Cell { row: r0, col: _ } = state else { panic!() };
                    let a = if r0 < 9 { 1 } else { 3 };
                    let out = env.step(a, &mut r).unwrap();
                    steps += 1;
                    state = out.next_state;
                    if out.done {
                        assert_eq!(state, RoverState::Cell { row: 9, col: 9 });
                        assert_eq!(out.reward, 1.0);
                        break;
                    }
                }
                assert!(steps <= 18);
                assert_eq!(steps, MarsRoverEnv::distance_to_goal(row, col));
            }
        }
    }

    #[test]
    fn rover_episode_is_capped() {
        let mut env = MarsRoverEnv::new(MarsRoverConfig::default()).unwrap();
        let log = rollout(&mut env, |_, _, _| Ok(0), 1.0, &mut rng(3)).unwrap();
        assert_eq!(log.len(), 200);
        assert!(log.steps.last().unwrap().done);
    }

    #[test]
    fn rover_reset_reproducible() {
        let mut env = MarsRoverEnv::new(MarsRoverConfig::default()).unwrap();
        let a = env.reset(&mut rng(7));
        let b = env.reset(&mut rng(7));
        assert_eq!(a, b);
        let RoverState::Cell { row, col } = a else { panic!() };
        assert!(row < 3 && col < 3);
    }

    #[test]
    fn one_hot_features_are_orthonormal() {
        let env = MarsRoverEnv::new(MarsRoverConfig::default()).unwrap();
        let mut states: Vec<RoverState> = (0..10).flat_map(|r| (0..10).map(move |c| RoverState::Cell { row: r, col: c })).collect();
        states.push(RoverState::Failed);
        let feats: Vec<Vec<f64>> = states.iter().map(|s| env.featurize(s)).collect();
        for i in 0..feats.len() {
            for j in 0..feats.len() {
                let d: f64 = feats[i].iter().zip(&feats[j]).map(|(a, b)| a * b).sum();
                assert_eq!(d, if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn cartpole_basics() {
        let mut env = CartPoleEnv::new(CartPoleConfig::default()).unwrap();
        let mut r = rng(2);
        for _ in 0..20 {
            let s = env.reset(&mut r);
            assert!(s[2].abs() < env.config().theta_limit);
        }
        let f = env.featurize(&[0.0; 4]);
        assert!(f.iter().all(|x| x.abs() < 1e-12));
        // Always pushing right eventually fails.
        let log = rollout(&mut env, |_, _, _| Ok(1), 1.0, &mut r).unwrap();
        assert!(log.len() < 200);
        assert_eq!(log.steps.last().unwrap().reward, 0.0);
        assert!(log.steps.last().unwrap().done);
    }

    #[test]
    fn cartpole_length_changes_successor() {
        let env = CartPoleEnv::new(CartPoleConfig::default()).unwrap();
        let mut r = rng(4);
        for _ in 0..100 {
            let s: CartPoleState = [
                r.random_range(-1.0..1.0),
                r.random_range(-1.0..1.0),
                r.random_range(-0.2..0.2),
                r.random_range(-1.0..1.0),
            ];
            let a = env.step_under_param(&s, 1, 0.5, 0).unwrap()[0].1.next_state;
            let b = env.step_under_param(&s, 1, 1.25, 0).unwrap()[0].1.next_state;
            assert_ne!(a, b);
        }
    }

    #[test]
    fn step_agrees_with_step_under_param() {
        let mut env = CartPoleEnv::new(CartPoleConfig::default()).unwrap();
        let mut r = rng(6);
        let s = env.reset(&mut r);
        let expected = env.step_under_param(&s, 0, 0.75, 0).unwrap()[0].1.clone();
        assert_eq!(env.step(0, &mut r).unwrap(), expected);

        // Rover: empirical failure frequency matches the enumerated distribution.
        let mut rover = MarsRoverEnv::new(MarsRoverConfig {
            fail_prob: 0.3,
            ..Default::default()
        })
        .unwrap();
        let mut fails = 0;
        let n = 20_000;
        for _ in 0..n {
            rover.place(4, 4);
            if rover.step(3, &mut r).unwrap().next_state == RoverState::Failed {
                fails += 1;
            }
        }
        let freq = fails as f64 / n as f64;
        let se = (0.3f64 * 0.7 / n as f64).sqrt();
        assert!((freq - 0.3).abs() < 4.0 * se);
    }

    #[test]
    fn cartpole_alternating_pushes_stay_bounded() {
        // Energy drift under explicit Euler stays small over an episode.
        let cfg = CartPoleConfig::default();
        let mut s: CartPoleState = [0.0, 0.0, 0.01, 0.0];
        let energy = |s: &CartPoleState| {
            let l = cfg.pole_length;
            0.5 * cfg.cart_mass * s[1] * s[1] + 0.5 * cfg.pole_mass * (l * s[3]).powi(2) + cfg.pole_mass * cfg.gravity * l * s[2].cos()
        };
        let e0 = energy(&s);
        for t in 0..200 {
            s = CartPoleEnv::integrate(&cfg, &s, t % 2, cfg.pole_length);
        }
        assert!(s.iter().all(|x| x.is_finite()));
        assert!((energy(&s) - e0).abs() < 0.5, "{} vs {}", energy(&s), e0);
    }

    #[test]
    fn model_param_sampling() {
        let mut r = rng(10);
        let p = sample_model_params(EnvKind::MarsRover, 15, 0.005, 0.25, &mut r).unwrap();
        assert_eq!(p.len(), 15);
        assert!(p.iter().all(|&x| x > 0.0 && x < 1.0));
        let l = sample_model_params(EnvKind::CartPole, 15, 0.75, 0.25, &mut r).unwrap();
        assert!(l.iter().all(|&x| x >= MIN_SAMPLED_POLE_LENGTH));
        assert!(sample_model_params(EnvKind::CartPole, 0, 0.75, 0.25, &mut r).is_err());
    }

    #[test]
    fn schedules() {
        let sched = ParamSchedule::new("p_s3", vec![(0, 0.001), (250, 0.8), (500, 0.1), (750, 0.9)]).unwrap();
        assert_eq!(sched.value_at(0), Some(0.001));
        assert_eq!(sched.value_at(499), Some(0.8));
        assert_eq!(sched.value_at(999), Some(0.9));
        assert_eq!(sched.switch_at(500), Some(0.1));
        assert_eq!(sched.switch_at(501), None);
        assert_eq!(ParamSchedule::evenly_spaced("p_s3", &[0.001, 0.8, 0.1, 0.9], 1000).unwrap(), sched);
        assert!(ParamSchedule::new("p_s3", vec![(5, 0.1), (5, 0.2)]).is_err());

        let mut env = SimpleMdpEnv::new(0.5).unwrap();
        let mut switches = 0;
        for ep in 0..1000 {
            if adversarial_schedule(&mut env, &sched, ep).unwrap().is_some() {
                switches += 1;
            }
            assert_eq!(env.param(), sched.value_at(ep).unwrap());
        }
        assert_eq!(switches, 4);
        assert!(adversarial_schedule(&mut env, &ParamSchedule::default(), 0).unwrap().is_none());
        let wrong = ParamSchedule::new("pole_length", vec![(0, 1.0)]).unwrap();
        assert!(matches!(adversarial_schedule(&mut env, &wrong, 0), Err(Error::Config(_))));

        let mut cp = CartPoleEnv::new(CartPoleConfig::default()).unwrap();
        let change = ParamSchedule::new("pole_length", vec![(300, 1.25)]).unwrap();
        adversarial_schedule(&mut cp, &change, 300).unwrap();
        assert_eq!(cp.param(), 1.25);
    }
}
