//! Worst-case expectation over an L1 ball intersected with the simplex, and
//! the robust Bellman backup built on it.

use crate::error::{invalid, Error, Result};
use crate::mdp::{argmax, validate_simplex, FiniteRmdp, QTable, StochasticPolicy, SIMPLEX_TOL};

/// L1 diameter of the probability simplex.
pub const MAX_L1_RADIUS: f64 = 2.0;

/// `{p in simplex : ||p - nominal||_1 <= radius}`, optionally restricted to
/// distributions supported on a subset of coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct L1UncertaintySet {
    nominal: Vec<f64>,
    radius: f64,
    /// `None` means every coordinate may carry mass.
    support: Option<Vec<bool>>,
}

impl L1UncertaintySet {
    /// Radii above 2 are clamped to 2 (the whole simplex).
    pub fn new(nominal: Vec<f64>, radius: f64) -> Result<Self> {
        if !validate_simplex(&nominal, SIMPLEX_TOL) {
            return Err(invalid("nominal is not a point of the simplex"));
        }
        if !radius.is_finite() || radius < 0.0 {
            return Err(invalid(format!("radius {radius} must be finite and >= 0")));
        }
        let radius = if radius > MAX_L1_RADIUS {
            log::warn!("L1 radius {radius} exceeds the simplex diameter; clamped to 2");
            MAX_L1_RADIUS
        } else {
            radius
        };
        Ok(Self {
            nominal,
            radius,
            support: None,
        })
    }

    /// Keeps only distributions supported on `allowed`. The nominal must
    /// already put no mass outside it.
    pub fn restricted_to(mut self, allowed: &[usize]) -> Result<Self> {
        let mut mask = vec![false; self.dim()];
        for &i in allowed {
            if i >= self.dim() {
                return Err(invalid(format!("support index {i} out of range for dimension {}", self.dim())));
            }
            mask[i] = true;
        }
        if !mask.contains(&true) {
            return Err(invalid("support must not be empty"));
        }
        if self.nominal.iter().zip(&mask).any(|(&x, &m)| !m && x > SIMPLEX_TOL) {
            return Err(invalid("nominal puts mass outside the support"));
        }
        self.nominal.iter_mut().zip(&mask).filter(|(_, &m)| !m).for_each(|(x, _)| *x = 0.0);
        self.support = Some(mask);
        Ok(self)
    }

    /// Whether coordinate `i` may carry mass.
    pub fn allows(&self, i: usize) -> bool {
        self.support.as_ref().is_none_or(|m| m[i])
    }

    pub fn nominal(&self) -> &[f64] {
        &self.nominal
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn dim(&self) -> usize {
        self.nominal.len()
    }

    pub fn contains(&self, p: &[f64], tol: f64) -> bool {
        p.len() == self.dim()
            && validate_simplex(p, tol)
            && l1_distance(p, &self.nominal) <= self.radius + tol
            && p.iter().enumerate().all(|(i, &x)| self.allows(i) || x <= tol)
    }
}

pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorstCaseResult {
    pub value: f64,
    pub minimizer: Vec<f64>,
}

/// Exact minimizer of `p . v` over the set.
///
/// Moves up to `radius / 2` mass onto the lowest-valued allowed coordinate,
/// taking it from the highest-valued coordinates first.
pub fn worst_case_l1(set: &L1UncertaintySet, v: &[f64]) -> Result<WorstCaseResult> {
    if v.len() != set.dim() {
        return Err(invalid(format!(
            "value vector has dimension {}, set has {}",
            v.len(),
            set.dim()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("value vector".into()));
    }
    let mut p = set.nominal.clone();
    let target = (0..v.len())
        .filter(|&i| set.allows(i))
        .reduce(|best, i| if v[i] < v[best] { i } else { best })
        .expect("support is non-empty");
    let shift = (set.radius / 2.0).min(1.0 - p[target]).max(0.0);
    if shift > 0.0 {
        p[target] += shift;
        let mut donors: Vec<usize> = (0..p.len()).filter(|&i| i != target && p[i] > 0.0).collect();
        donors.sort_by(|&i, &j| v[j].total_cmp(&v[i]).then(i.cmp(&j)));
        let mut remaining = shift;
        for j in donors {
            if remaining <= 0.0 {
                break;
            }
            let take = p[j].min(remaining);
            p[j] -= take;
            remaining -= take;
        }
        // Only rounding residue can be left here.
        if remaining > 0.0 {
            p[target] -= remaining;
        }
    }
    Ok(WorstCaseResult {
        value: dot(&p, v),
        minimizer: p,
    })
}

/// Grid-search upper bound on the inner minimum, for testing.
///
/// Every point `q` of the regular simplex grid with spacing `1/grid` is pulled
/// radially toward the nominal until it lies inside the ball, so every
/// candidate is feasible and the returned value can only overestimate.
pub fn brute_force_oracle(set: &L1UncertaintySet, v: &[f64], grid: usize) -> Result<f64> {
    let n = set.dim();
    if n > 4 {
        return Err(Error::Unsupported(format!("oracle dimension {n} > 4")));
    }
    if grid < 100 {
        return Err(invalid(format!("grid {grid} < 100")));
    }
    if v.len() != n {
        return Err(invalid("dimension mismatch"));
    }
    let nominal = set.nominal();
    let mut best = dot(nominal, v);
    let mut counts = vec![0usize; n];
    let mut point = vec![0.0; n];
    let mut visit = |counts: &[usize]| {
        if counts.iter().enumerate().any(|(i, &k)| k > 0 && !set.allows(i)) {
            return;
        }
        for (x, &k) in point.iter_mut().zip(counts) {
            *x = k as f64 / grid as f64;
        }
        let dist = l1_distance(&point, nominal);
        let t = if dist <= set.radius() { 1.0 } else { set.radius() / dist };
        let value: f64 = (0..n).map(|i| (nominal[i] + t * (point[i] - nominal[i])) * v[i]).sum();
        if value < best {
            best = value;
        }
    };
    enumerate_compositions(&mut counts, 0, grid, &mut visit);
    Ok(best)
}

fn enumerate_compositions(counts: &mut [usize], idx: usize, left: usize, visit: &mut impl FnMut(&[usize])) {
    if idx + 1 == counts.len() {
        counts[idx] = left;
        visit(counts);
        return;
    }
    for k in 0..=left {
        counts[idx] = k;
        enumerate_compositions(counts, idx + 1, left - k, visit);
    }
}

/// A rectangular family of L1 sets indexed by `(h, s, a)`.
///
/// With `steps == 1` the same set is used at every step.
#[derive(Debug, Clone, PartialEq)]
pub struct RectangularSet {
    steps: usize,
    num_states: usize,
    num_actions: usize,
    sets: Vec<L1UncertaintySet>,
}

impl RectangularSet {
    /// `sets` is row-major `[step][s][a]`.
    pub fn new(steps: usize, num_states: usize, num_actions: usize, sets: Vec<L1UncertaintySet>) -> Result<Self> {
        if steps == 0 || sets.len() != steps * num_states * num_actions {
            return Err(invalid("rectangular set has the wrong number of members"));
        }
        if sets.iter().any(|m| m.dim() != num_states) {
            return Err(invalid("member dimension differs from the state count"));
        }
        Ok(Self {
            steps,
            num_states,
            num_actions,
            sets,
        })
    }

    pub fn get(&self, h: usize, s: usize, a: usize) -> &L1UncertaintySet {
        let step = if self.steps == 1 { 0 } else { h - 1 };
        &self.sets[(step * self.num_states + s) * self.num_actions + a]
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn members(&self) -> &[L1UncertaintySet] {
        &self.sets
    }
}

/// How the continuation value at `h + 1` is formed from `Q^{h+1}`.
#[derive(Debug, Clone, Copy)]
pub enum Continuation<'a> {
    /// `sum_a' pi[h+1][s'][a'] Q^{h+1}[s'][a']`
    Policy(&'a StochasticPolicy),
    /// `max_a' Q^{h+1}[s'][a']`
    Greedy,
}

/// Value of landing in each state after acting at step `h`.
///
/// Terminal states contribute their entry reward; at `h = H` non-terminal
/// states contribute nothing.
pub fn continuation_values(rmdp: &FiniteRmdp, q_next: &QTable, h: usize, mode: Continuation<'_>) -> Vec<f64> {
    (0..rmdp.num_states())
        .map(|s| {
            if rmdp.is_terminal(s) {
                rmdp.terminal_reward(s)
            } else if h >= rmdp.horizon() {
                0.0
            } else {
                match mode {
                    Continuation::Policy(pi) => pi.state_value(q_next, h + 1, s),
                    Continuation::Greedy => q_next.row(h + 1, s)[argmax(q_next.row(h + 1, s))],
                }
            }
        })
        .collect()
}

/// One robust backup at step `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct BackupResult {
    /// Row-major `[s][a]`; zero at terminal states.
    pub q: Vec<f64>,
    /// Row-major `[s][a][s']` worst-case transitions. Terminal rows hold the
    /// set nominal.
    pub minimizers: Vec<f64>,
}

/// `q_h[s][a] = r[s][a] + gamma * min_{p in sets(h,s,a)} p . u`.
pub fn robust_bellman_backup(
    rmdp: &FiniteRmdp,
    sets: &RectangularSet,
    q_next: &QTable,
    h: usize,
    mode: Continuation<'_>,
) -> Result<BackupResult> {
    let (ns, na) = (rmdp.num_states(), rmdp.num_actions());
    if sets.num_states() != ns || sets.num_actions() != na {
        return Err(invalid("uncertainty set shape does not match the MDP"));
    }
    let u = continuation_values(rmdp, q_next, h, mode);
    let mut q = vec![0.0; ns * na];
    let mut minimizers = vec![0.0; ns * na * ns];
    for s in 0..ns {
        for a in 0..na {
            let set = sets.get(h, s, a);
            let row = &mut minimizers[(s * na + a) * ns..(s * na + a + 1) * ns];
            if rmdp.is_terminal(s) {
                row.copy_from_slice(set.nominal());
                continue;
            }
            let wc = worst_case_l1(set, &u)?;
            q[s * na + a] = rmdp.reward(s, a) + rmdp.gamma() * wc.value;
            row.copy_from_slice(&wc.minimizer);
        }
    }
    Ok(BackupResult { q, minimizers })
}
