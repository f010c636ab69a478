//! Finite-horizon robust dynamic programming, the uncertainty robust Bellman
//! recursion for `w`, and the mean-Q recursion used for the Gaussian
//! approximation `N(Q_bar, diag(w))` of the posterior over robust Q-values.

use crate::error::{invalid, Error, Result};
use crate::mdp::{validate_simplex, FiniteRmdp, QTable, SimRng, StepTable, StochasticPolicy, WTable, SIMPLEX_TOL};
use crate::posterior::{PosteriorState, PosteriorUncertaintySet};
use crate::robust_opt::{continuation_values, robust_bellman_backup, Continuation};

/// Worst-case transitions `p_hat[h][s][a][s']`, `h = 1..=H`.
#[derive(Debug, Clone, PartialEq)]
pub struct WorstCaseKernel {
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    p: Vec<f64>,
}

impl WorstCaseKernel {
    fn empty(horizon: usize, num_states: usize, num_actions: usize) -> Self {
        Self {
            horizon,
            num_states,
            num_actions,
            p: vec![0.0; horizon * num_states * num_actions * num_states],
        }
    }

    /// Builds a kernel from row-major `[h][s][a][s']` data; rows must be distributions.
    pub fn from_rows(horizon: usize, num_states: usize, num_actions: usize, p: Vec<f64>) -> Result<Self> {
        if p.len() != horizon * num_states * num_actions * num_states {
            return Err(invalid("worst-case kernel has the wrong size"));
        }
        let k = Self {
            horizon,
            num_states,
            num_actions,
            p,
        };
        k.validate()?;
        Ok(k)
    }

    fn offset(&self, h: usize, s: usize, a: usize) -> usize {
        (((h - 1) * self.num_states + s) * self.num_actions + a) * self.num_states
    }

    pub fn row(&self, h: usize, s: usize, a: usize) -> &[f64] {
        let o = self.offset(h, s, a);
        &self.p[o..o + self.num_states]
    }

    fn row_mut(&mut self, h: usize, s: usize, a: usize) -> &mut [f64] {
        let o = self.offset(h, s, a);
        &mut self.p[o..o + self.num_states]
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.p.chunks(self.num_states)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows().all(|r| validate_simplex(r, SIMPLEX_TOL)) {
            Ok(())
        } else {
            Err(invalid("worst-case kernel row is not a distribution"))
        }
    }

    fn check_shape(&self, rmdp: &FiniteRmdp) -> Result<()> {
        if self.horizon != rmdp.horizon() || self.num_states != rmdp.num_states() || self.num_actions != rmdp.num_actions() {
            return Err(invalid("worst-case kernel shape does not match the MDP"));
        }
        Ok(())
    }
}

/// Which policy the robust recursion evaluates.
#[derive(Debug, Clone, Copy)]
pub enum PolicyMode<'a> {
    Fixed(&'a StochasticPolicy),
    /// Robust value iteration: the policy at `h + 1` is greedy in the freshly
    /// computed `Q^{h+1}`.
    Greedy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustSolution {
    pub q: QTable,
    pub worst_case: WorstCaseKernel,
    /// The evaluated policy (the greedy policy of `q` in greedy mode).
    pub policy: StochasticPolicy,
}

/// Backward induction `h = H..1` of the robust Bellman operator.
pub fn robust_q_solve(rmdp: &FiniteRmdp, sets: &PosteriorUncertaintySet, mode: PolicyMode<'_>) -> Result<RobustSolution> {
    let (hz, ns, na) = (rmdp.horizon(), rmdp.num_states(), rmdp.num_actions());
    if sets.steps() != 1 && sets.steps() != hz {
        return Err(invalid("uncertainty sets must be shared or indexed by every step"));
    }
    if let PolicyMode::Fixed(pi) = mode {
        check_policy(rmdp, pi)?;
    }
    let mut q = QTable::zeros(hz, ns, na);
    let mut worst_case = WorstCaseKernel::empty(hz, ns, na);
    for h in (1..=hz).rev() {
        let cont = match mode {
            PolicyMode::Fixed(pi) => Continuation::Policy(pi),
            PolicyMode::Greedy => Continuation::Greedy,
        };
        let backup = robust_bellman_backup(rmdp, sets, &q, h, cont)?;
        for s in 0..ns {
            q.row_mut(h, s).copy_from_slice(&backup.q[s * na..(s + 1) * na]);
            for a in 0..na {
                let o = (s * na + a) * ns;
                worst_case.row_mut(h, s, a).copy_from_slice(&backup.minimizers[o..o + ns]);
            }
        }
    }
    let policy = match mode {
        PolicyMode::Fixed(pi) => pi.clone(),
        PolicyMode::Greedy => StochasticPolicy::greedy(&q),
    };
    Ok(RobustSolution { q, worst_case, policy })
}

fn check_policy(rmdp: &FiniteRmdp, pi: &StochasticPolicy) -> Result<()> {
    if pi.horizon() != rmdp.horizon() || pi.num_states() != rmdp.num_states() || pi.num_actions() != rmdp.num_actions() {
        return Err(invalid("policy shape does not match the MDP"));
    }
    Ok(())
}

/// Solves `w^h = nu^h + gamma^2 sum_{s',a'} pi^{h+1}_{s'a'} E[p_hat^h_{sas'}] w^{h+1}_{s'a'}`
/// backwards from `w^{H+1} = 0`. Terminal states carry no variance.
pub fn urbe_solve(rmdp: &FiniteRmdp, pi: &StochasticPolicy, expected_worst_case: &WorstCaseKernel, nu: &StepTable) -> Result<WTable> {
    check_policy(rmdp, pi)?;
    expected_worst_case.check_shape(rmdp)?;
    expected_worst_case.validate()?;
    let (hz, ns, na) = (rmdp.horizon(), rmdp.num_states(), rmdp.num_actions());
    if nu.horizon() != hz || nu.num_states() != ns || nu.num_actions() != na {
        return Err(invalid("local uncertainty table shape does not match the MDP"));
    }
    if let Some(bad) = nu.as_slice().iter().find(|&&x| !x.is_finite() || x < 0.0) {
        return Err(invalid(format!("local uncertainty {bad} must be finite and >= 0")));
    }
    let g2 = rmdp.gamma() * rmdp.gamma();
    let mut w = WTable::zeros(hz, ns, na);
    for h in (1..=hz).rev() {
        let next_value: Vec<f64> = (0..ns)
            .map(|s2| {
                if h == hz || rmdp.is_terminal(s2) {
                    0.0
                } else {
                    pi.state_value(&w, h + 1, s2)
                }
            })
            .collect();
        for s in (0..ns).filter(|&s| !rmdp.is_terminal(s)) {
            for a in 0..na {
                let prop: f64 = expected_worst_case.row(h, s, a).iter().zip(&next_value).map(|(p, v)| p * v).sum();
                w.set(h, s, a, nu.get(h, s, a) + g2 * prop);
            }
        }
    }
    Ok(w)
}

/// `Q_bar^h = r + gamma sum pi^{h+1} E[p_hat^h] Q_bar^{h+1}`, `Q_bar^{H+1} = 0`.
pub fn mean_q_solve(rmdp: &FiniteRmdp, pi: &StochasticPolicy, expected_worst_case: &WorstCaseKernel) -> Result<QTable> {
    check_policy(rmdp, pi)?;
    expected_worst_case.check_shape(rmdp)?;
    let (hz, ns, na) = (rmdp.horizon(), rmdp.num_states(), rmdp.num_actions());
    let mut q = QTable::zeros(hz, ns, na);
    for h in (1..=hz).rev() {
        let u = continuation_values(rmdp, &q, h, Continuation::Policy(pi));
        for s in (0..ns).filter(|&s| !rmdp.is_terminal(s)) {
            for a in 0..na {
                let ev: f64 = expected_worst_case.row(h, s, a).iter().zip(&u).map(|(p, v)| p * v).sum();
                q.set(h, s, a, rmdp.reward(s, a) + rmdp.gamma() * ev);
            }
        }
    }
    Ok(q)
}

/// Gaussian approximation of the posterior over robust Q-values.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianQPosterior {
    pub mean: QTable,
    pub variance: WTable,
}

impl GaussianQPosterior {
    pub fn assemble(rmdp: &FiniteRmdp, pi: &StochasticPolicy, expected_worst_case: &WorstCaseKernel, nu: &StepTable) -> Result<Self> {
        Ok(Self {
            mean: mean_q_solve(rmdp, pi, expected_worst_case)?,
            variance: urbe_solve(rmdp, pi, expected_worst_case, nu)?,
        })
    }
}

/// Estimator for `E_t[p_hat]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum WorstCaseEstimator {
    /// The minimizer of the robust solve on the posterior-mean set.
    PlugIn,
    /// Average of the minimizers over `samples` posterior draws, each with the
    /// set recentred on the draw.
    MonteCarlo { samples: usize },
}

/// Estimates `E_t[p_hat]` for sets of radius `psi` around the posterior.
pub fn expected_worst_case(
    rmdp: &FiniteRmdp,
    post: &PosteriorState,
    psi: f64,
    mode: PolicyMode<'_>,
    estimator: WorstCaseEstimator,
    rng: &mut SimRng,
) -> Result<WorstCaseKernel> {
    match estimator {
        WorstCaseEstimator::PlugIn => {
            let sets = post.build_uniform_uncertainty_set(psi)?;
            Ok(robust_q_solve(rmdp, &sets, mode)?.worst_case)
        }
        WorstCaseEstimator::MonteCarlo { samples } => {
            if samples == 0 {
                return Err(invalid("Monte-Carlo estimator needs at least one sample"));
            }
            let (hz, ns, na) = (rmdp.horizon(), rmdp.num_states(), rmdp.num_actions());
            let mut acc = WorstCaseKernel::empty(hz, ns, na);
            for _ in 0..samples {
                let draw = post.sample_model(rng);
                let sets = post.sets_around(&draw, |_, _| psi)?;
                let sol = robust_q_solve(rmdp, &sets, mode)?;
                acc.p.iter_mut().zip(&sol.worst_case.p).for_each(|(a, x)| *a += x);
            }
            for row in acc.p.chunks_mut(ns) {
                let total: f64 = row.iter().sum();
                if total <= 0.0 || !total.is_finite() {
                    return Err(Error::NonFinite("averaged worst-case row".into()));
                }
                row.iter_mut().for_each(|x| *x /= total);
            }
            Ok(acc)
        }
    }
}

/// `nu^h_sa = Q_max^2 sum_{s'} var_t(p_sas') / E_t(p_sas')` with the Dirichlet
/// moment bound, i.e. `Q_max^2 |support(s,a)| / sum(phi + n)`. Zero at terminal states.
pub fn dirichlet_local_uncertainty(rmdp: &FiniteRmdp, post: &PosteriorState) -> StepTable {
    let (hz, ns, na) = (rmdp.horizon(), rmdp.num_states(), rmdp.num_actions());
    let q2 = rmdp.q_max() * rmdp.q_max();
    let mut nu = StepTable::zeros(hz, ns, na);
    for h in 1..=hz {
        for s in (0..ns).filter(|&s| !rmdp.is_terminal(s)) {
            for a in 0..na {
                let mean = post.posterior_mean(h, s, a);
                let ratio: f64 = (0..ns)
                    .filter(|&s2| mean[s2] > 0.0)
                    .map(|s2| post.posterior_component_variance(h, s, a, s2) / mean[s2])
                    .sum();
                nu.set(h, s, a, q2 * ratio);
            }
        }
    }
    nu
}

/// `nu^h_sa = beta^2 / max(1, n_sa)`. Zero at terminal states.
pub fn count_local_uncertainty(rmdp: &FiniteRmdp, post: &PosteriorState, beta: f64) -> StepTable {
    let (hz, ns, na) = (rmdp.horizon(), rmdp.num_states(), rmdp.num_actions());
    let mut nu = StepTable::zeros(hz, ns, na);
    for h in 1..=hz {
        for s in (0..ns).filter(|&s| !rmdp.is_terminal(s)) {
            for a in 0..na {
                nu.set(h, s, a, post.local_uncertainty_tabular(h, s, a, beta));
            }
        }
    }
    nu
}
