//! Finite-horizon tabular MDP types, step-indexed value tables, stochastic
//! policies and episode rollouts.
//!
//! Steps are 1-based: `h = 1..=H` are decision steps and `h = H + 1` is the
//! terminal boundary where every table is identically zero.

use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};

/// Absolute tolerance used everywhere a probability vector is validated.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// RNG used by every stochastic component. Seeded explicitly for determinism.
pub type SimRng = ChaCha8Rng;

/// True iff every entry is `>= -tol` and the entries sum to one within `tol`.
pub fn validate_simplex(p: &[f64], tol: f64) -> bool {
    if p.is_empty() || p.iter().any(|x| !x.is_finite()) {
        return false;
    }
    p.iter().all(|&x| x >= -tol) && (p.iter().sum::<f64>() - 1.0).abs() <= tol
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// A finite robust MDP with known rewards.
///
/// `terminal_reward[s]` is collected when the process enters terminal state `s`;
/// acting in a terminal state is not possible (episodes end on entry).
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteRmdp {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    gamma: f64,
    rewards: Vec<f64>,
    terminal: Vec<bool>,
    terminal_reward: Vec<f64>,
}

impl FiniteRmdp {
    /// `rewards` is row-major `[s][a]`.
    pub fn new(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        gamma: f64,
        rewards: Vec<f64>,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(invalid("empty state or action space"));
        }
        if horizon == 0 {
            return Err(invalid("horizon must be >= 1"));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(invalid(format!("gamma {gamma} outside (0, 1]")));
        }
        if rewards.len() != num_states * num_actions {
            return Err(invalid(format!(
                "reward table has {} entries, expected {}",
                rewards.len(),
                num_states * num_actions
            )));
        }
        if rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::NonFinite("reward table".into()));
        }
        Ok(Self {
            num_states,
            num_actions,
            horizon,
            gamma,
            rewards,
            terminal: vec![false; num_states],
            terminal_reward: vec![0.0; num_states],
        })
    }

    /// Marks `state` as terminal with the given entry reward.
    pub fn with_terminal(mut self, state: usize, entry_reward: f64) -> Result<Self> {
        if state >= self.num_states {
            return Err(invalid(format!("terminal state {state} out of range")));
        }
        if !entry_reward.is_finite() {
            return Err(Error::NonFinite("terminal reward".into()));
        }
        self.terminal[state] = true;
        self.terminal_reward[state] = entry_reward;
        Ok(self)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.num_actions + a]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn terminal_reward(&self, s: usize) -> f64 {
        self.terminal_reward[s]
    }

    /// Largest reward magnitude, over step rewards and terminal entry rewards.
    pub fn r_max(&self) -> f64 {
        self.rewards
            .iter()
            .chain(self.terminal_reward.iter())
            .fold(0.0_f64, |m, r| m.max(r.abs()))
    }

    /// `H * R_max`.
    pub fn q_max(&self) -> f64 {
        self.horizon as f64 * self.r_max()
    }

    /// Adds `c` to every step reward.
    pub fn shift_rewards(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.rewards.iter_mut().for_each(|r| *r += c);
        out
    }
}

/// Values indexed by `(h, s, a)` with `h = 1..=H+1`. Row `H+1` is always zero.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTable {
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    data: Vec<f64>,
}

/// Step-indexed robust Q-values.
pub type QTable = StepTable;
/// Step-indexed URBE solution (posterior variance bound).
pub type WTable = StepTable;

impl StepTable {
    pub fn zeros(horizon: usize, num_states: usize, num_actions: usize) -> Self {
        Self {
            horizon,
            num_states,
            num_actions,
            data: vec![0.0; (horizon + 1) * num_states * num_actions],
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn offset(&self, h: usize, s: usize) -> usize {
        debug_assert!(h >= 1 && h <= self.horizon + 1, "step {h} out of range");
        ((h - 1) * self.num_states + s) * self.num_actions
    }

    pub fn get(&self, h: usize, s: usize, a: usize) -> f64 {
        self.data[self.offset(h, s) + a]
    }

    pub fn set(&mut self, h: usize, s: usize, a: usize, v: f64) {
        debug_assert!(h <= self.horizon, "row H+1 is fixed at zero");
        let o = self.offset(h, s);
        self.data[o + a] = v;
    }

    /// All action values at `(h, s)`.
    pub fn row(&self, h: usize, s: usize) -> &[f64] {
        let o = self.offset(h, s);
        &self.data[o..o + self.num_actions]
    }

    pub fn row_mut(&mut self, h: usize, s: usize) -> &mut [f64] {
        let o = self.offset(h, s);
        &mut self.data[o..o + self.num_actions]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn max_abs_diff(&self, other: &StepTable) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Greedy action of `q` at `(h, s)`, ties to the lowest index.
pub fn policy_greedy_from_q(q: &QTable, h: usize, s: usize) -> usize {
    argmax(q.row(h, s))
}

/// A step-dependent stochastic policy `pi[h][s][a]`, `h = 1..=H`.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticPolicy {
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    probs: Vec<f64>,
}

impl StochasticPolicy {
    pub fn uniform(horizon: usize, num_states: usize, num_actions: usize) -> Self {
        Self {
            horizon,
            num_states,
            num_actions,
            probs: vec![1.0 / num_actions as f64; horizon * num_states * num_actions],
        }
    }

    /// Builds a policy from row-major `[h][s][a]` probabilities, `h = 1..=H`.
    pub fn from_probs(
        horizon: usize,
        num_states: usize,
        num_actions: usize,
        probs: Vec<f64>,
    ) -> Result<Self> {
        if probs.len() != horizon * num_states * num_actions {
            return Err(invalid("policy table has the wrong size"));
        }
        for (i, row) in probs.chunks(num_actions).enumerate() {
            if !validate_simplex(row, 1e-12) {
                return Err(invalid(format!(
                    "policy row (h={}, s={}) is not a distribution",
                    i / num_states + 1,
                    i % num_states
                )));
            }
        }
        Ok(Self {
            horizon,
            num_states,
            num_actions,
            probs,
        })
    }

    /// Deterministic policy that is greedy in `q` at every step.
    pub fn greedy(q: &QTable) -> Self {
        let (hz, ns, na) = (q.horizon(), q.num_states(), q.num_actions());
        let mut probs = vec![0.0; hz * ns * na];
        for h in 1..=hz {
            for s in 0..ns {
                let a = policy_greedy_from_q(q, h, s);
                probs[((h - 1) * ns + s) * na + a] = 1.0;
            }
        }
        Self {
            horizon: hz,
            num_states: ns,
            num_actions: na,
            probs,
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn probs(&self, h: usize, s: usize) -> &[f64] {
        let o = ((h - 1) * self.num_states + s) * self.num_actions;
        &self.probs[o..o + self.num_actions]
    }

    /// `sum_a pi[h][s][a] * q[h][s][a]`.
    pub fn state_value(&self, q: &QTable, h: usize, s: usize) -> f64 {
        self.probs(h, s)
            .iter()
            .zip(q.row(h, s))
            .map(|(p, v)| p * v)
            .sum()
    }
}

/// One observed transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition<S> {
    pub h: usize,
    pub state: S,
    pub action: usize,
    pub reward: f64,
    pub next_state: S,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog<S> {
    pub steps: Vec<Transition<S>>,
    pub gamma: f64,
    pub episode_return: f64,
}

impl<S> EpisodeLog<S> {
    /// `sum_h gamma^(h-1) r^h` recomputed from the steps.
    pub fn recompute_return(&self) -> f64 {
        discounted_sum(self.steps.iter().map(|t| t.reward), self.gamma)
    }

    pub fn undiscounted_return(&self) -> f64 {
        self.steps.iter().map(|t| t.reward).sum()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

fn discounted_sum(rewards: impl Iterator<Item = f64>, gamma: f64) -> f64 {
    let mut total = 0.0;
    let mut disc = 1.0;
    for r in rewards {
        total += disc * r;
        disc *= gamma;
    }
    total
}

/// Result of one environment step.
///
/// `done` ends the episode; `terminal` additionally marks an absorbing state
/// (no bootstrapping past it). A time-limit cut is `done` but not `terminal`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome<S> {
    pub next_state: S,
    pub reward: f64,
    pub done: bool,
    pub terminal: bool,
}

/// An episodic environment.
pub trait Environment {
    type State: Clone + std::fmt::Debug;

    fn num_actions(&self) -> usize;
    fn horizon(&self) -> usize;
    fn reset(&mut self, rng: &mut SimRng) -> Self::State;
    /// Fails with a usage error when the episode has already ended.
    fn step(&mut self, action: usize, rng: &mut SimRng) -> Result<StepOutcome<Self::State>>;
}

/// Runs one episode. `choose(h, state, rng)` picks the action at step `h`.
pub fn rollout<E, F>(env: &mut E, mut choose: F, gamma: f64, rng: &mut SimRng) -> Result<EpisodeLog<E::State>>
where
    E: Environment,
    F: FnMut(usize, &E::State, &mut SimRng) -> Result<usize>,
{
    let mut state = env.reset(rng);
    let mut steps = Vec::new();
    for h in 1..=env.horizon() {
        let action = choose(h, &state, rng)?;
        if action >= env.num_actions() {
            return Err(invalid(format!("action {action} out of range at step {h}")));
        }
        let out = env.step(action, rng)?;
        if !out.reward.is_finite() {
            return Err(Error::NonFinite(format!("reward at step {h}")));
        }
        steps.push(Transition {
            h,
            state: state.clone(),
            action,
            reward: out.reward,
            next_state: out.next_state.clone(),
            done: out.done,
        });
        state = out.next_state;
        if out.done {
            break;
        }
    }
    let episode_return = discounted_sum(steps.iter().map(|t| t.reward), gamma);
    Ok(EpisodeLog {
        steps,
        gamma,
        episode_return,
    })
}
