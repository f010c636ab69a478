//! Tabular URBE agent: robust planning on the posterior uncertainty set plus a
//! Gaussian exploration bonus scaled by the URBE variance.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::envs::TabularEnv;
use crate::error::{Error, Result};
use crate::mdp::{argmax, EpisodeLog, FiniteRmdp, QTable, SimRng, Transition, WTable};
use crate::posterior::PosteriorState;
use crate::robust_dp::{
    count_local_uncertainty, dirichlet_local_uncertainty, expected_worst_case, robust_q_solve, urbe_solve, PolicyMode, WorstCaseEstimator,
};
use crate::robust_opt::{l1_distance, MAX_L1_RADIUS};

/// Source term of the URBE recursion for tabular agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LocalUncertainty {
    /// Dirichlet moment bound, `Q_max^2 * sum var/mean`.
    Dirichlet,
    /// `beta^2 / n`.
    Count,
    /// Always zero (no exploration bonus from local uncertainty).
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UrbeAgentConfig {
    /// L1 radius of the posterior uncertainty set.
    pub psi: f64,
    pub beta: f64,
    pub gamma: f64,
    pub estimator: WorstCaseEstimator,
    pub local_uncertainty: LocalUncertainty,
    /// When false the agent acts greedily in the robust Q-values.
    pub explore: bool,
    /// Episodes between full re-solves.
    pub replan_every: usize,
    /// Dirichlet pseudo-count on every supported successor.
    pub prior_pseudo_count: f64,
}

impl Default for UrbeAgentConfig {
    fn default() -> Self {
        Self {
            psi: 0.1,
            beta: 0.5,
            gamma: 1.0,
            estimator: WorstCaseEstimator::PlugIn,
            local_uncertainty: LocalUncertainty::Dirichlet,
            explore: true,
            replan_every: 1,
            prior_pseudo_count: 1.0,
        }
    }
}

impl UrbeAgentConfig {
    /// Non-robust variant: zero-radius sets, same bonus.
    pub fn ube(&self) -> Self {
        Self { psi: 0.0, ..self.clone() }
    }

    /// Fully robust planner without exploration.
    pub fn robust_baseline(&self) -> Self {
        Self {
            psi: MAX_L1_RADIUS,
            explore: false,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=MAX_L1_RADIUS).contains(&self.psi) {
            return Err(Error::Config(format!("psi = {} outside [0, 2]", self.psi)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta = {} must be positive", self.beta)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma = {} outside (0, 1]", self.gamma)));
        }
        if self.replan_every == 0 {
            return Err(Error::Config("replan_every must be >= 1".into()));
        }
        if !(self.prior_pseudo_count > 0.0 && self.prior_pseudo_count.is_finite()) {
            return Err(Error::Config("prior_pseudo_count must be positive".into()));
        }
        if let WorstCaseEstimator::MonteCarlo { samples: 0 } = self.estimator {
            return Err(Error::Config("estimator.samples must be >= 1".into()));
        }
        Ok(())
    }
}

/// `argmax_b q[b] + zeta[b] * sqrt(w[b])`, ties to the lowest index.
pub fn select_action(q: &[f64], w: &[f64], zeta: &[f64]) -> usize {
    let scores: Vec<f64> = q.iter().zip(w).zip(zeta).map(|((q, w), z)| q + z * w.max(0.0).sqrt()).collect();
    argmax(&scores)
}

/// The current plan: robust Q-values and their URBE variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub q: QTable,
    pub w: WTable,
    /// Mean L1 distance between the logged posterior sample and the posterior mean.
    pub sample_distance: f64,
}

/// Per-episode diagnostics, one JSONL line each.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub param: f64,
    pub actions: Vec<usize>,
    pub q_start: Vec<f64>,
    pub w_start: Vec<f64>,
    pub sample_distance: f64,
}

#[derive(Debug, Clone)]
pub struct UrbeAgent {
    config: UrbeAgentConfig,
    rmdp: FiniteRmdp,
    posterior: PosteriorState,
    plan: Option<Plan>,
    episodes: usize,
}

impl UrbeAgent {
    pub fn new<E: TabularEnv>(env: &E, config: UrbeAgentConfig) -> Result<Self> {
        config.validate()?;
        let rmdp = env.tabular_model(config.gamma)?;
        let posterior = PosteriorState::with_support(env.num_states(), env.num_actions(), config.prior_pseudo_count, |s, a| {
            env.successor_support(s, a)
        })?
        .per_step(rmdp.horizon());
        Self::from_model(rmdp, posterior, config)
    }

    /// Agent over an explicit reward model and prior. The posterior may share
    /// counts across steps or keep one set per step of the horizon.
    pub fn from_model(rmdp: FiniteRmdp, posterior: PosteriorState, config: UrbeAgentConfig) -> Result<Self> {
        config.validate()?;
        if posterior.num_states() != rmdp.num_states() || posterior.num_actions() != rmdp.num_actions() {
            return Err(Error::InvalidInput("posterior and model disagree on the state or action count".into()));
        }
        let steps = posterior.steps();
        if steps != 1 && steps != rmdp.horizon() {
            return Err(Error::InvalidInput(format!("posterior has {steps} steps, horizon is {}", rmdp.horizon())));
        }
        Ok(Self {
            config,
            rmdp,
            posterior,
            plan: None,
            episodes: 0,
        })
    }

    pub fn config(&self) -> &UrbeAgentConfig {
        &self.config
    }

    pub fn posterior(&self) -> &PosteriorState {
        &self.posterior
    }

    pub fn plan(&self) -> Option<&Plan> {
        self.plan.as_ref()
    }

    /// Samples a model (for diagnostics), rebuilds the sets and solves for `Q` and `w`.
    pub fn replan(&mut self, rng: &mut SimRng) -> Result<&Plan> {
        let post = &self.posterior;
        let sample = post.sample_model(rng);
        let mean = post.mean_model();
        let rows = sample.rows().count().max(1);
        let sample_distance = sample.rows().zip(mean.rows()).map(|(a, b)| l1_distance(a, b)).sum::<f64>() / rows as f64;

        let sets = post.build_uniform_uncertainty_set(self.config.psi)?;
        let sol = robust_q_solve(&self.rmdp, &sets, PolicyMode::Greedy)?;
        let p_hat = match self.config.estimator {
            WorstCaseEstimator::PlugIn => sol.worst_case.clone(),
            est => expected_worst_case(&self.rmdp, post, self.config.psi, PolicyMode::Greedy, est, rng)?,
        };
        let nu = match self.config.local_uncertainty {
            LocalUncertainty::Dirichlet => dirichlet_local_uncertainty(&self.rmdp, post),
            LocalUncertainty::Count => count_local_uncertainty(&self.rmdp, post, self.config.beta),
            LocalUncertainty::Zero => QTable::zeros(self.rmdp.horizon(), self.rmdp.num_states(), self.rmdp.num_actions()),
        };
        let w = urbe_solve(&self.rmdp, &sol.policy, &p_hat, &nu)?;
        self.plan = Some(Plan {
            q: sol.q,
            w,
            sample_distance,
        });
        Ok(self.plan.as_ref().expect("just set"))
    }

    /// Action at step `h` in state `s` under the current plan.
    pub fn act(&self, h: usize, s: usize, rng: &mut SimRng) -> Result<usize> {
        let plan = self.plan.as_ref().ok_or_else(|| Error::Usage("act called before planning".into()))?;
        let q = plan.q.row(h, s);
        if !self.config.explore {
            return Ok(argmax(q));
        }
        let zeta: Vec<f64> = (0..q.len()).map(|_| StandardNormal.sample(rng)).collect();
        Ok(select_action(q, plan.w.row(h, s), &zeta))
    }

    pub fn observe(&mut self, t: &Transition<usize>) -> Result<()> {
        self.posterior.update_counts(t.h, t.state, t.action, t.next_state)
    }

    pub fn episodes(&self) -> usize {
        self.episodes
    }
}

/// Runs one episode: (re)plan, act with the variance bonus, update counts after each step.
pub fn urbe_episode<E: TabularEnv>(agent: &mut UrbeAgent, env: &mut E, rng: &mut SimRng) -> Result<(EpisodeLog<usize>, EpisodeRecord)> {
    if agent.plan.is_none() || agent.episodes.is_multiple_of(agent.config.replan_every) {
        agent.replan(rng)?;
    }
    let mut state = env.reset(rng);
    let start = state;
    let mut steps = Vec::new();
    for h in 1..=env.horizon().min(agent.rmdp.horizon()) {
        let action = agent.act(h, state, rng)?;
        let out = env.step(action, rng)?;
        if !out.reward.is_finite() {
            return Err(Error::NonFinite(format!("reward at step {h}")));
        }
        let t = Transition {
            h,
            state,
            action,
            reward: out.reward,
            next_state: out.next_state,
            done: out.done,
        };
        agent.observe(&t)?;
        steps.push(t);
        state = out.next_state;
        if out.done {
            break;
        }
    }
    let mut log = EpisodeLog {
        steps,
        gamma: agent.config.gamma,
        episode_return: 0.0,
    };
    log.episode_return = log.recompute_return();
    let plan = agent.plan.as_ref().expect("planned above");
    let record = EpisodeRecord {
        episode: agent.episodes,
        episode_return: log.undiscounted_return(),
        param: env.param(),
        actions: log.steps.iter().map(|t| t.action).collect(),
        q_start: plan.q.row(1, start).to_vec(),
        w_start: plan.w.row(1, start).to_vec(),
        sample_distance: plan.sample_distance,
    };
    agent.episodes += 1;
    Ok((log, record))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{adversarial_schedule, ParamSchedule, ParametricEnv, SimpleMdpEnv};
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn run(config: UrbeAgentConfig, p: f64, episodes: usize, seed: u64) -> (UrbeAgent, Vec<EpisodeRecord>) {
        let mut env = SimpleMdpEnv::new(p).unwrap();
        let mut agent = UrbeAgent::new(&env, config).unwrap();
        let mut rng = SimRng::seed_from_u64(seed);
        let recs = (0..episodes).map(|_| urbe_episode(&mut agent, &mut env, &mut rng).unwrap().1).collect();
        (agent, recs)
    }

    #[test]
    fn config_validation() {
        let ok = UrbeAgentConfig::default();
        ok.validate().unwrap();
        for bad in [
            UrbeAgentConfig { psi: 2.5, ..ok.clone() },
            UrbeAgentConfig { beta: 0.0, ..ok.clone() },
            UrbeAgentConfig { gamma: 0.0, ..ok.clone() },
            UrbeAgentConfig { replan_every: 0, ..ok.clone() },
            UrbeAgentConfig {
                estimator: WorstCaseEstimator::MonteCarlo { samples: 0 },
                ..ok.clone()
            },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn robust_baseline_always_takes_the_safe_action() {
        let (_, recs) = run(UrbeAgentConfig::default().robust_baseline(), 0.9, 50, 1);
        for r in &recs {
            assert_eq!(r.actions, vec![0]);
            assert_eq!(r.episode_return, 0.14);
        }
    }

    #[test]
    fn zero_bonus_is_robust_greedy() {
        let cfg = UrbeAgentConfig {
            local_uncertainty: LocalUncertainty::Zero,
            ..Default::default()
        };
        let mut env = SimpleMdpEnv::new(0.5).unwrap();
        let mut agent = UrbeAgent::new(&env, cfg).unwrap();
        let mut rng = SimRng::seed_from_u64(2);
        for _ in 0..30 {
            let (log, _) = urbe_episode(&mut agent, &mut env, &mut rng).unwrap();
            let plan = agent.plan().unwrap();
            for t in &log.steps {
                assert!(plan.w.row(t.h, t.state).iter().all(|&w| w == 0.0));
                assert_eq!(t.action, argmax(plan.q.row(t.h, t.state)));
            }
        }
    }

    #[test]
    fn identical_seeds_identical_logs() {
        let cfg = UrbeAgentConfig::default();
        let (_, a) = run(cfg.clone(), 0.5, 40, 7);
        let (_, b) = run(cfg.clone(), 0.5, 40, 7);
        assert_eq!(a, b);
        let (_, c) = run(cfg, 0.5, 40, 8);
        assert_ne!(a, c);
    }

    #[test]
    fn counts_match_transitions() {
        let (agent, recs) = run(UrbeAgentConfig::default(), 0.5, 60, 3);
        let steps: usize = recs.iter().map(|r| r.actions.len()).sum();
        assert_eq!(agent.posterior().total_observations(), steps as u64);
    }

    #[test]
    fn monte_carlo_estimator_runs() {
        let cfg = UrbeAgentConfig {
            estimator: WorstCaseEstimator::MonteCarlo { samples: 8 },
            replan_every: 3,
            ..Default::default()
        };
        let (agent, recs) = run(cfg, 0.5, 12, 4);
        assert_eq!(agent.episodes(), 12);
        assert!(recs.iter().all(|r| r.w_start.iter().all(|&w| w >= 0.0)));
    }

    #[test]
    fn bonus_explores_every_action() {
        let (_, recs) = run(UrbeAgentConfig::default(), 0.5, 200, 5);
        let mut seen = [false; 4];
        for r in &recs {
            seen[r.actions[0]] = true;
        }
        assert!(seen.iter().all(|&x| x));
    }

    #[test]
    fn learns_good_branch_when_stationary() {
        // With a reliably good branch the agent should mostly leave the safe action.
        let (_, recs) = run(UrbeAgentConfig::default(), 0.95, 400, 6);
        let late = &recs[300..];
        let risky = late.iter().filter(|r| r.actions[0] != 0).count();
        assert!(risky > 80, "{risky}");
    }

    #[test]
    fn schedule_switches_reach_agent_env() {
        let sched = ParamSchedule::new("p_s3", vec![(0, 0.001), (5, 0.8)]).unwrap();
        let mut env = SimpleMdpEnv::new(0.5).unwrap();
        let mut agent = UrbeAgent::new(&env, UrbeAgentConfig::default()).unwrap();
        let mut rng = SimRng::seed_from_u64(0);
        for ep in 0..10 {
            adversarial_schedule(&mut env, &sched, ep).unwrap();
            let (_, rec) = urbe_episode(&mut agent, &mut env, &mut rng).unwrap();
            assert_eq!(rec.param, env.param());
            assert_eq!(rec.param, if ep < 5 { 0.001 } else { 0.8 });
        }
    }

    proptest! {
        #[test]
        fn action_invariant_to_q_shift(
            q in prop::collection::vec(-5.0f64..5.0, 4),
            w in prop::collection::vec(0.0f64..3.0, 4),
            zeta in prop::collection::vec(-3.0f64..3.0, 4),
            c in -10.0f64..10.0,
        ) {
            let shifted: Vec<f64> = q.iter().map(|x| x + c).collect();
            let a = select_action(&q, &w, &zeta);
            let b = select_action(&shifted, &w, &zeta);
            // Shifting can only change the choice through rounding of near-ties.
            let score = |q: &[f64], i: usize| q[i] + zeta[i] * w[i].sqrt();
            prop_assert!(a == b || (score(&q, a) - score(&q, b)).abs() < 1e-9);
        }

        #[test]
        fn positive_variance_reaches_every_action(k in 0usize..4, w in 0.01f64..2.0) {
            // A large enough draw for action k makes it the choice.
            let q = [0.3, -0.2, 0.9, 0.0];
            let mut zeta = [0.0; 4];
            zeta[k] = 10.0 / w.sqrt();
            prop_assert_eq!(select_action(&q, &[w; 4], &zeta), k);
        }
    }
}
