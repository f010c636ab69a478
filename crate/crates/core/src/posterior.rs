//! Dirichlet posterior over tabular transition kernels.

use rand_distr::{Distribution, Gamma};

use crate::error::{invalid, Result};
use crate::mdp::SimRng;
use crate::robust_opt::{l1_distance, L1UncertaintySet, RectangularSet};

/// Posterior uncertainty sets are L1 balls around the posterior mean.
pub type PosteriorUncertaintySet = RectangularSet;

/// Independent Dirichlet posteriors, one per `(s, a)` (and per step when the
/// counts are kept step-dependent).
///
/// Successors outside the declared support carry no prior mass and can never
/// be observed.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorState {
    num_states: usize,
    num_actions: usize,
    steps: usize,
    prior: Vec<f64>,
    counts: Vec<u64>,
}

impl PosteriorState {
    /// Symmetric prior with `pseudo_count` on every successor.
    pub fn uniform(num_states: usize, num_actions: usize, pseudo_count: f64) -> Result<Self> {
        Self::from_prior(num_states, num_actions, vec![pseudo_count; num_states * num_actions * num_states])
    }

    /// Symmetric prior restricted to `support(s, a)`.
    pub fn with_support<F>(num_states: usize, num_actions: usize, pseudo_count: f64, support: F) -> Result<Self>
    where
        F: Fn(usize, usize) -> Vec<usize>,
    {
        let mut prior = vec![0.0; num_states * num_actions * num_states];
        for s in 0..num_states {
            for a in 0..num_actions {
                for s2 in support(s, a) {
                    if s2 >= num_states {
                        return Err(invalid(format!("support of ({s},{a}) names state {s2}")));
                    }
                    prior[(s * num_actions + a) * num_states + s2] = pseudo_count;
                }
            }
        }
        Self::from_prior(num_states, num_actions, prior)
    }

    /// Arbitrary prior pseudo-counts `[s][a][s']`; zeros mark unreachable successors.
    pub fn from_prior(num_states: usize, num_actions: usize, prior: Vec<f64>) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(invalid("empty state or action space"));
        }
        if prior.len() != num_states * num_actions * num_states {
            return Err(invalid("prior has the wrong size"));
        }
        if prior.iter().any(|&x| !x.is_finite() || x < 0.0) {
            return Err(invalid("prior pseudo-counts must be finite and non-negative"));
        }
        for (i, row) in prior.chunks(num_states).enumerate() {
            if row.iter().all(|&x| x == 0.0) {
                return Err(invalid(format!(
                    "(s={}, a={}) has an empty prior support",
                    i / num_actions,
                    i % num_actions
                )));
            }
        }
        Ok(Self {
            num_states,
            num_actions,
            steps: 1,
            counts: vec![0; prior.len()],
            prior,
        })
    }

    /// Keeps separate counts for each of `horizon` steps. Resets all counts.
    pub fn per_step(mut self, horizon: usize) -> Self {
        self.steps = horizon.max(1);
        self.counts = vec![0; self.steps * self.prior.len()];
        self
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// 1 when counts are shared across steps.
    pub fn steps(&self) -> usize {
        self.steps
    }

    fn row_offset(&self, h: usize, s: usize, a: usize) -> usize {
        let step = if self.steps == 1 { 0 } else { h - 1 };
        ((step * self.num_states + s) * self.num_actions + a) * self.num_states
    }

    fn prior_row(&self, s: usize, a: usize) -> &[f64] {
        let o = (s * self.num_actions + a) * self.num_states;
        &self.prior[o..o + self.num_states]
    }

    fn check(&self, h: usize, s: usize, a: usize) -> Result<()> {
        if s >= self.num_states || a >= self.num_actions {
            return Err(invalid(format!("(s={s}, a={a}) out of range")));
        }
        if self.steps > 1 && (h == 0 || h > self.steps) {
            return Err(invalid(format!("step {h} out of range")));
        }
        Ok(())
    }

    /// Records one observed transition `(s, a) -> s'` at step `h`.
    pub fn update_counts(&mut self, h: usize, s: usize, a: usize, next: usize) -> Result<()> {
        self.check(h, s, a)?;
        if next >= self.num_states {
            return Err(invalid(format!("successor {next} out of range")));
        }
        if self.prior_row(s, a)[next] == 0.0 {
            return Err(invalid(format!("successor {next} outside the support of ({s},{a})")));
        }
        let o = self.row_offset(h, s, a);
        self.counts[o + next] += 1;
        Ok(())
    }

    pub fn counts(&self, h: usize, s: usize, a: usize) -> &[u64] {
        let o = self.row_offset(h, s, a);
        &self.counts[o..o + self.num_states]
    }

    /// `n_sa`, the number of recorded departures from `(s, a)`.
    pub fn visit_count(&self, h: usize, s: usize, a: usize) -> u64 {
        self.counts(h, s, a).iter().sum()
    }

    pub fn total_observations(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Successors with non-zero prior mass.
    pub fn support(&self, s: usize, a: usize) -> Vec<usize> {
        self.prior_row(s, a)
            .iter()
            .enumerate()
            .filter(|(_, &x)| x > 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    /// Dirichlet parameters `phi + n`.
    pub fn alpha(&self, h: usize, s: usize, a: usize) -> Vec<f64> {
        self.prior_row(s, a)
            .iter()
            .zip(self.counts(h, s, a))
            .map(|(&p, &n)| p + n as f64)
            .collect()
    }

    /// `(phi + n) / sum(phi + n)`.
    pub fn posterior_mean(&self, h: usize, s: usize, a: usize) -> Vec<f64> {
        let alpha = self.alpha(h, s, a);
        let total: f64 = alpha.iter().sum();
        alpha.into_iter().map(|x| x / total).collect()
    }

    /// Variance bound `(phi + n)_{s'} / (sum(phi + n))^2`.
    pub fn posterior_component_variance(&self, h: usize, s: usize, a: usize, next: usize) -> f64 {
        let alpha = self.alpha(h, s, a);
        let total: f64 = alpha.iter().sum();
        alpha[next] / (total * total)
    }

    /// Draws one kernel from the posterior (normalised Gamma variates per row).
    pub fn sample_model(&self, rng: &mut SimRng) -> TransitionKernel {
        let (ns, na) = (self.num_states, self.num_actions);
        let mut p = vec![0.0; self.steps * ns * na * ns];
        for step in 1..=self.steps {
            for s in 0..ns {
                for a in 0..na {
                    let alpha = self.alpha(step, s, a);
                    let o = ((step - 1) * ns * na + s * na + a) * ns;
                    let row = &mut p[o..o + ns];
                    sample_dirichlet(&alpha, rng, row);
                }
            }
        }
        TransitionKernel {
            steps: self.steps,
            num_states: ns,
            num_actions: na,
            p,
        }
    }

    /// Posterior mean as a kernel.
    pub fn mean_model(&self) -> TransitionKernel {
        let (ns, na) = (self.num_states, self.num_actions);
        let mut p = Vec::with_capacity(self.steps * ns * na * ns);
        for step in 1..=self.steps {
            for s in 0..ns {
                for a in 0..na {
                    p.extend(self.posterior_mean(step, s, a));
                }
            }
        }
        TransitionKernel {
            steps: self.steps,
            num_states: ns,
            num_actions: na,
            p,
        }
    }

    /// L1 balls of radius `psi(s, a)` around the posterior mean.
    pub fn build_uncertainty_set<F>(&self, psi: F) -> Result<PosteriorUncertaintySet>
    where
        F: Fn(usize, usize) -> f64,
    {
        self.sets_around(&self.mean_model(), psi)
    }

    /// L1 balls of radius `psi(s, a)` around each row of `center`, restricted
    /// to this posterior's support so no set reaches successors the posterior
    /// rules out.
    pub fn sets_around<F>(&self, center: &TransitionKernel, psi: F) -> Result<PosteriorUncertaintySet>
    where
        F: Fn(usize, usize) -> f64,
    {
        let supports: Vec<Vec<usize>> = (0..self.num_states)
            .flat_map(|s| (0..self.num_actions).map(move |a| (s, a)))
            .map(|(s, a)| self.support(s, a))
            .collect();
        sets_around_with(center, psi, |s, a, set| set.restricted_to(&supports[s * self.num_actions + a]))
    }

    /// Same radius everywhere.
    pub fn build_uniform_uncertainty_set(&self, psi: f64) -> Result<PosteriorUncertaintySet> {
        self.build_uncertainty_set(|_, _| psi)
    }

    /// `beta^2 / max(1, n_sa)`.
    pub fn local_uncertainty_tabular(&self, h: usize, s: usize, a: usize, beta: f64) -> f64 {
        beta * beta / (self.visit_count(h, s, a).max(1) as f64)
    }

    /// Fraction of posterior draws (over all rows) that land inside the ball
    /// of radius `psi` around the posterior mean.
    pub fn empirical_coverage(&self, psi: f64, draws: usize, rng: &mut SimRng) -> f64 {
        let mean = self.mean_model();
        let rows = self.steps * self.num_states * self.num_actions;
        let mut inside = 0usize;
        for _ in 0..draws {
            let sample = self.sample_model(rng);
            for (m, x) in mean.p.chunks(self.num_states).zip(sample.p.chunks(self.num_states)) {
                if l1_distance(m, x) <= psi {
                    inside += 1;
                }
            }
        }
        inside as f64 / (draws * rows).max(1) as f64
    }
}

pub(crate) fn sample_dirichlet(alpha: &[f64], rng: &mut SimRng, out: &mut [f64]) {
    let mut total = 0.0;
    for (o, &a) in out.iter_mut().zip(alpha) {
        *o = if a > 0.0 {
            Gamma::new(a, 1.0).expect("positive shape").sample(rng)
        } else {
            0.0
        };
        total += *o;
    }
    if total > 0.0 && total.is_finite() {
        out.iter_mut().for_each(|o| *o /= total);
    } else {
        // All variates underflowed; fall back to the mean.
        let a0: f64 = alpha.iter().sum();
        for (o, &a) in out.iter_mut().zip(alpha) {
            *o = a / a0;
        }
    }
}

/// L1 balls of radius `psi(s, a)` around each row of `center`, over the whole
/// simplex.
pub fn build_sets_around<F>(center: &TransitionKernel, psi: F) -> Result<RectangularSet>
where
    F: Fn(usize, usize) -> f64,
{
    sets_around_with(center, psi, |_, _, set| Ok(set))
}

fn sets_around_with<F, G>(center: &TransitionKernel, psi: F, finish: G) -> Result<RectangularSet>
where
    F: Fn(usize, usize) -> f64,
    G: Fn(usize, usize, L1UncertaintySet) -> Result<L1UncertaintySet>,
{
    let (ns, na) = (center.num_states, center.num_actions);
    let mut sets = Vec::with_capacity(center.steps * ns * na);
    for step in 1..=center.steps {
        for s in 0..ns {
            for a in 0..na {
                let radius = psi(s, a);
                if radius < 0.0 {
                    return Err(invalid(format!("psi({s},{a}) = {radius} < 0")));
                }
                sets.push(finish(s, a, L1UncertaintySet::new(center.row(step, s, a).to_vec(), radius)?)?);
            }
        }
    }
    RectangularSet::new(center.steps, ns, na, sets)
}

/// A transition kernel `p[step][s][a][s']`; `steps == 1` means time-homogeneous.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionKernel {
    steps: usize,
    num_states: usize,
    num_actions: usize,
    p: Vec<f64>,
}

impl TransitionKernel {
    pub fn new(steps: usize, num_states: usize, num_actions: usize, p: Vec<f64>) -> Result<Self> {
        if p.len() != steps * num_states * num_actions * num_states {
            return Err(invalid("kernel has the wrong size"));
        }
        for row in p.chunks(num_states) {
            if !crate::mdp::validate_simplex(row, crate::mdp::SIMPLEX_TOL) {
                return Err(invalid("kernel row is not a distribution"));
            }
        }
        Ok(Self {
            steps,
            num_states,
            num_actions,
            p,
        })
    }

    pub fn row(&self, h: usize, s: usize, a: usize) -> &[f64] {
        let step = if self.steps == 1 { 0 } else { h - 1 };
        let o = ((step * self.num_states + s) * self.num_actions + a) * self.num_states;
        &self.p[o..o + self.num_states]
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

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.p.chunks(self.num_states)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{validate_simplex, SIMPLEX_TOL};
    use rand::SeedableRng;

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn counting() {
        let mut post = PosteriorState::uniform(3, 1, 1.0).unwrap();
        post.update_counts(1, 0, 0, 1).unwrap();
        assert_eq!(post.counts(1, 0, 0), &[0, 1, 0]);
        post.update_counts(1, 0, 0, 1).unwrap();
        assert_eq!(post.counts(1, 0, 0)[1], 2);
        assert!(post.update_counts(1, 3, 0, 0).is_err());
        assert!(post.update_counts(1, 0, 1, 0).is_err());
        assert!(post.update_counts(1, 0, 0, 5).is_err());
    }

    #[test]
    fn mean_formula() {
        let mut post = PosteriorState::uniform(3, 1, 1.0).unwrap();
        post.update_counts(1, 0, 0, 0).unwrap();
        post.update_counts(1, 0, 0, 0).unwrap();
        assert!(close(&post.posterior_mean(1, 0, 0), &[0.6, 0.2, 0.2]));

        let post2 = PosteriorState::uniform(2, 1, 1.0).unwrap();
        assert!(close(&post2.posterior_mean(1, 0, 0), &[0.5, 0.5]));

        let mut post3 = PosteriorState::uniform(3, 1, 1.0).unwrap();
        for _ in 0..10 {
            post3.update_counts(1, 0, 0, 2).unwrap();
        }
        assert!(close(&post3.posterior_mean(1, 0, 0), &[1.0 / 13.0, 1.0 / 13.0, 11.0 / 13.0]));

        let mut post4 = PosteriorState::uniform(2, 1, 1.0).unwrap();
        for _ in 0..100_000 {
            post4.update_counts(1, 0, 0, 0).unwrap();
        }
        assert!(post4.posterior_mean(1, 0, 0)[0] > 0.9999);
    }

    #[test]
    fn variance_bound_formula() {
        let post = PosteriorState::uniform(2, 1, 1.0).unwrap();
        assert_eq!(post.posterior_component_variance(1, 0, 0, 0), 0.25);
        let mut post = PosteriorState::uniform(2, 1, 1.0).unwrap();
        for _ in 0..98 {
            post.update_counts(1, 0, 0, 0).unwrap();
        }
        assert!((post.posterior_component_variance(1, 0, 0, 0) - 99.0 / 10_000.0).abs() < 1e-15);
        let total: f64 = post.alpha(1, 0, 0).iter().sum();
        for s2 in 0..2 {
            let ratio = post.posterior_component_variance(1, 0, 0, s2) / post.posterior_mean(1, 0, 0)[s2];
            assert!(ratio <= 1.0 / total + 1e-15);
        }
    }

    #[test]
    fn conjugacy() {
        let prior = [0.5, 2.0, 1.0].repeat(3);
        let mut post = PosteriorState::from_prior(3, 1, prior.clone()).unwrap();
        let obs = [0usize, 2, 2, 1, 2];
        for &o in &obs {
            post.update_counts(1, 0, 0, o).unwrap();
        }
        let mut direct = prior;
        for &o in &obs {
            direct[o] += 1.0;
        }
        let direct = PosteriorState::from_prior(3, 1, direct).unwrap();
        assert!(close(&post.posterior_mean(1, 0, 0), &direct.posterior_mean(1, 0, 0)));
    }

    #[test]
    fn restricted_support() {
        let post = PosteriorState::with_support(3, 2, 1.0, |s, a| if a == 0 { vec![s] } else { vec![1, 2] }).unwrap();
        assert!(close(&post.posterior_mean(1, 2, 0), &[0.0, 0.0, 1.0]));
        assert!(close(&post.posterior_mean(1, 0, 1), &[0.0, 0.5, 0.5]));
        let mut p = post.clone();
        assert!(p.update_counts(1, 0, 1, 0).is_err());
        assert!(PosteriorState::with_support(2, 1, 1.0, |_, _| vec![]).is_err());
    }

    #[test]
    fn tabular_local_uncertainty() {
        let mut post = PosteriorState::uniform(2, 1, 1.0).unwrap();
        assert!((post.local_uncertainty_tabular(1, 0, 0, 0.5) - 0.25).abs() < 1e-15);
        let mut prev = post.local_uncertainty_tabular(1, 0, 0, 0.5);
        for i in 0..25 {
            post.update_counts(1, 0, 0, i % 2).unwrap();
            let cur = post.local_uncertainty_tabular(1, 0, 0, 0.5);
            assert!(cur <= prev);
            prev = cur;
        }
        assert!((prev - 0.01).abs() < 1e-15);
    }

    #[test]
    fn concentrated_dirichlet_sample() {
        let post = PosteriorState::from_prior(2, 1, [1e6, 1.0].repeat(2)).unwrap();
        let mut rng = SimRng::seed_from_u64(3);
        for _ in 0..100 {
            assert!(post.sample_model(&mut rng).row(1, 0, 0)[0] > 0.99);
        }
    }

    #[test]
    fn sampling_is_reproducible_and_valid() {
        let mut post = PosteriorState::uniform(4, 2, 0.5).unwrap();
        post.update_counts(1, 1, 1, 3).unwrap();
        let a = post.sample_model(&mut SimRng::seed_from_u64(9));
        let b = post.sample_model(&mut SimRng::seed_from_u64(9));
        assert_eq!(a, b);
        assert!(a.rows().all(|r| validate_simplex(r, SIMPLEX_TOL)));
    }

    #[test]
    fn sample_mean_matches_posterior_mean() {
        // Monte Carlo mean within 3 standard errors of the closed form.
        let mut post = PosteriorState::uniform(3, 1, 1.0).unwrap();
        for o in [0, 0, 1, 2, 0] {
            post.update_counts(1, 0, 0, o).unwrap();
        }
        let alpha = post.alpha(1, 0, 0);
        let a0: f64 = alpha.iter().sum();
        let mean = post.posterior_mean(1, 0, 0);
        let mut rng = SimRng::seed_from_u64(11);
        let draws = 10_000;
        let mut acc = [0.0; 3];
        for _ in 0..draws {
            let k = post.sample_model(&mut rng);
            for (x, y) in acc.iter_mut().zip(k.row(1, 0, 0)) {
                *x += y;
            }
        }
        for i in 0..3 {
            let exact_var = alpha[i] * (a0 - alpha[i]) / (a0 * a0 * (a0 + 1.0));
            let se = (exact_var / draws as f64).sqrt();
            assert!((acc[i] / draws as f64 - mean[i]).abs() <= 3.0 * se, "component {i}");
        }
    }

    #[test]
    fn uncertainty_sets() {
        let post = PosteriorState::uniform(3, 2, 1.0).unwrap();
        let sets = post.build_uniform_uncertainty_set(0.5).unwrap();
        let m = sets.get(1, 1, 1);
        assert!(close(m.nominal(), &[1.0 / 3.0; 3]));
        assert_eq!(m.radius(), 0.5);
        assert_eq!(post.build_uniform_uncertainty_set(0.0).unwrap().get(1, 0, 0).radius(), 0.0);
        assert_eq!(post.build_uniform_uncertainty_set(2.0).unwrap().get(1, 0, 0).radius(), 2.0);
        assert!(post.build_uniform_uncertainty_set(-1.0).is_err());
    }

    #[test]
    fn per_step_counts_are_separate() {
        let mut post = PosteriorState::uniform(2, 1, 1.0).unwrap().per_step(3);
        post.update_counts(2, 0, 0, 1).unwrap();
        assert_eq!(post.visit_count(1, 0, 0), 0);
        assert_eq!(post.visit_count(2, 0, 0), 1);
        assert!(post.update_counts(4, 0, 0, 1).is_err());
    }

    #[test]
    fn coverage_grows_with_radius() {
        let post = PosteriorState::uniform(3, 1, 1.0).unwrap();
        let mut rng = SimRng::seed_from_u64(5);
        let small = post.empirical_coverage(0.2, 500, &mut rng);
        let large = post.empirical_coverage(1.0, 500, &mut rng);
        assert!(small < large);
        assert_eq!(post.empirical_coverage(2.0, 100, &mut rng), 1.0);
    }
}
