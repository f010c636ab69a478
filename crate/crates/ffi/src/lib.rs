//! C ABI over the tabular robust planner and its numeric building blocks.
//!
//! Every function returns a [`UrbeStatus`]. On failure a message is stored
//! per thread and can be read with [`urbe_last_error_message`]. Handles are
//! opaque, created by `*_new` and released by the matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use rand::SeedableRng;
use urbe_core::deep::sherman_morrison_update;
use urbe_core::mdp::{FiniteRmdp, SimRng, Transition};
use urbe_core::posterior::PosteriorState;
use urbe_core::robust_opt::{worst_case_l1, L1UncertaintySet};
use urbe_core::urbe_agent::{UrbeAgent, UrbeAgentConfig};
use urbe_core::Error;

/// Result code of every exported function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UrbeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Config = 3,
    Usage = 4,
    Unsupported = 5,
    NonFinite = 6,
    Io = 7,
    Checkpoint = 8,
    Panic = 9,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> UrbeStatus {
    match e {
        Error::InvalidInput(_) => UrbeStatus::InvalidInput,
        Error::Config(_) => UrbeStatus::Config,
        Error::Usage(_) => UrbeStatus::Usage,
        Error::Unsupported(_) => UrbeStatus::Unsupported,
        Error::NonFinite(_) => UrbeStatus::NonFinite,
        Error::Checkpoint(_) => UrbeStatus::Checkpoint,
        Error::Io(_) | Error::Csv(_) | Error::Json(_) => UrbeStatus::Io,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard<F: FnOnce() -> Result<(), (UrbeStatus, String)>>(f: F) -> UrbeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => UrbeStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            UrbeStatus::Panic
        }
    }
}

trait IntoFfi<T> {
    fn ffi(self) -> Result<T, (UrbeStatus, String)>;
}

impl<T> IntoFfi<T> for urbe_core::Result<T> {
    fn ffi(self) -> Result<T, (UrbeStatus, String)> {
        self.map_err(|e| (status_of(&e), e.to_string()))
    }
}

fn null(what: &str) -> (UrbeStatus, String) {
    (UrbeStatus::NullPointer, format!("{what} is NULL"))
}

fn invalid(msg: impl Into<String>) -> (UrbeStatus, String) {
    (UrbeStatus::InvalidInput, msg.into())
}

/// Borrows `len` elements; a zero length accepts any pointer.
unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], (UrbeStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], (UrbeStatus, String)> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// Message of the last failure on this thread, or NULL if none.
///
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn urbe_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Minimises `p . values` over the L1 ball of `radius` around `nominal`
/// intersected with the simplex. `out_minimizer` may be NULL.
///
/// # Safety
/// `nominal` and `values` must point to `n` doubles, `out_minimizer` (if
/// non-NULL) to `n` writable doubles, `out_value` to one writable double.
#[no_mangle]
pub unsafe extern "C" fn urbe_worst_case_l1(
    nominal: *const f64,
    values: *const f64,
    n: usize,
    radius: f64,
    out_value: *mut f64,
    out_minimizer: *mut f64,
) -> UrbeStatus {
    guard(|| {
        if out_value.is_null() {
            return Err(null("out_value"));
        }
        let nominal = slice(nominal, n, "nominal")?;
        let values = slice(values, n, "values")?;
        let set = L1UncertaintySet::new(nominal.to_vec(), radius).ffi()?;
        let r = worst_case_l1(&set, values).ffi()?;
        *out_value = r.value;
        if !out_minimizer.is_null() {
            slice_mut(out_minimizer, n, "out_minimizer")?.copy_from_slice(&r.minimizer);
        }
        Ok(())
    })
}

/// In-place rank-one update of the inverse covariance:
/// `sigma <- sigma - (sigma phi)(sigma phi)^T / (1 + phi^T sigma phi)`.
///
/// # Safety
/// `sigma` must point to `dim * dim` writable doubles (row-major, symmetric)
/// and `phi` to `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn urbe_sherman_morrison_update(sigma: *mut f64, dim: usize, phi: *const f64) -> UrbeStatus {
    guard(|| {
        if dim == 0 {
            return Err(invalid("dimension must be positive"));
        }
        let cells = dim.checked_mul(dim).ok_or_else(|| invalid("dimension overflows"))?;
        let sigma = slice_mut(sigma, cells, "sigma")?;
        let phi = slice(phi, dim, "phi")?;
        let updated = sherman_morrison_update(sigma, phi).ffi()?;
        sigma.copy_from_slice(&updated);
        Ok(())
    })
}

/// Dirichlet posterior over a stationary tabular transition kernel.
pub struct UrbePosterior {
    inner: PosteriorState,
}

/// Creates a posterior with `pseudo_count` on every successor.
///
/// # Safety
/// `out` must point to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn urbe_posterior_new(num_states: usize, num_actions: usize, pseudo_count: f64, out: *mut *mut UrbePosterior) -> UrbeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = PosteriorState::uniform(num_states, num_actions, pseudo_count).ffi()?;
        *out = Box::into_raw(Box::new(UrbePosterior { inner }));
        Ok(())
    })
}

/// Records the transition `(state, action) -> next`.
///
/// # Safety
/// `posterior` must be a live handle from [`urbe_posterior_new`].
#[no_mangle]
pub unsafe extern "C" fn urbe_posterior_observe(posterior: *mut UrbePosterior, state: usize, action: usize, next: usize) -> UrbeStatus {
    guard(|| {
        let p = posterior.as_mut().ok_or_else(|| null("posterior"))?;
        p.inner.update_counts(1, state, action, next).ffi()
    })
}

/// Writes the posterior mean of `P(. | state, action)` into `out` (length `len`
/// must equal the number of states).
///
/// # Safety
/// `posterior` must be a live handle; `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn urbe_posterior_mean(posterior: *const UrbePosterior, state: usize, action: usize, out: *mut f64, len: usize) -> UrbeStatus {
    guard(|| {
        let p = posterior.as_ref().ok_or_else(|| null("posterior"))?;
        let ns = p.inner.num_states();
        if len != ns {
            return Err(invalid(format!("output length {len} != number of states {ns}")));
        }
        if state >= ns || action >= p.inner.num_actions() {
            return Err(invalid(format!("(s={state}, a={action}) out of range")));
        }
        slice_mut(out, len, "out")?.copy_from_slice(&p.inner.posterior_mean(1, state, action));
        Ok(())
    })
}

/// Number of observations recorded so far.
///
/// # Safety
/// `posterior` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn urbe_posterior_total_observations(posterior: *const UrbePosterior, out: *mut u64) -> UrbeStatus {
    guard(|| {
        let p = posterior.as_ref().ok_or_else(|| null("posterior"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = p.inner.total_observations();
        Ok(())
    })
}

/// Releases a posterior. NULL is ignored.
///
/// # Safety
/// `posterior` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn urbe_posterior_free(posterior: *mut UrbePosterior) {
    if !posterior.is_null() {
        drop(Box::from_raw(posterior));
    }
}

/// Tabular URBE planner: robust Q-values on the posterior uncertainty set
/// and their URBE variance, with Thompson-style action selection.
pub struct UrbePlanner {
    agent: UrbeAgent,
    rng: SimRng,
}

/// Planner settings.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct UrbePlannerOptions {
    /// L1 radius of the posterior uncertainty sets, in `[0, 2]`.
    pub psi: f64,
    /// Scale of the count-based local uncertainty.
    pub beta: f64,
    pub gamma: f64,
    /// Dirichlet pseudo-count on every successor.
    pub prior_pseudo_count: f64,
    /// Nonzero enables the exploration bonus in `urbe_planner_act`.
    pub explore: u8,
    pub seed: u64,
}

/// Default planner settings.
#[no_mangle]
pub extern "C" fn urbe_planner_options_default() -> UrbePlannerOptions {
    let c = UrbeAgentConfig::default();
    UrbePlannerOptions {
        psi: c.psi,
        beta: c.beta,
        gamma: c.gamma,
        prior_pseudo_count: c.prior_pseudo_count,
        explore: c.explore as u8,
        seed: 0,
    }
}

/// Creates a planner for a finite-horizon MDP with rewards `[s][a]`
/// (row-major, `num_states * num_actions` entries). `terminal` (nullable)
/// flags absorbing states, whose entry rewards come from `terminal_rewards`
/// (nullable, zeros if NULL).
///
/// # Safety
/// Array arguments must point to the stated number of elements; `out` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn urbe_planner_new(
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    rewards: *const f64,
    terminal: *const u8,
    terminal_rewards: *const f64,
    options: UrbePlannerOptions,
    out: *mut *mut UrbePlanner,
) -> UrbeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cells = num_states.checked_mul(num_actions).ok_or_else(|| invalid("table size overflows"))?;
        if cells == 0 {
            return Err(invalid("empty state or action space"));
        }
        let r = slice(rewards, cells, "rewards")?;
        let mut rmdp = FiniteRmdp::new(num_states, num_actions, horizon, options.gamma, r.to_vec()).ffi()?;
        if !terminal.is_null() {
            let flags = slice(terminal, num_states, "terminal")?;
            let entry = if terminal_rewards.is_null() { None } else { Some(slice(terminal_rewards, num_states, "terminal_rewards")?) };
            for (s, &f) in flags.iter().enumerate() {
                if f != 0 {
                    rmdp = rmdp.with_terminal(s, entry.map_or(0.0, |e| e[s])).ffi()?;
                }
            }
        }
        let config = UrbeAgentConfig {
            psi: options.psi,
            beta: options.beta,
            gamma: options.gamma,
            prior_pseudo_count: options.prior_pseudo_count,
            explore: options.explore != 0,
            ..UrbeAgentConfig::default()
        };
        let posterior = PosteriorState::uniform(num_states, num_actions, options.prior_pseudo_count).ffi()?.per_step(horizon);
        let agent = UrbeAgent::from_model(rmdp, posterior, config).ffi()?;
        *out = Box::into_raw(Box::new(UrbePlanner {
            agent,
            rng: SimRng::seed_from_u64(options.seed),
        }));
        Ok(())
    })
}

/// Records `(state, action) -> next` observed at step `step` (1-based).
///
/// # Safety
/// `planner` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn urbe_planner_observe(planner: *mut UrbePlanner, step: usize, state: usize, action: usize, next: usize) -> UrbeStatus {
    guard(|| {
        let p = planner.as_mut().ok_or_else(|| null("planner"))?;
        p.agent
            .observe(&Transition {
                h: step,
                state,
                action,
                reward: 0.0,
                next_state: next,
                done: false,
            })
            .ffi()
    })
}

/// Re-solves the robust Q-values and URBE variances from the current posterior.
///
/// # Safety
/// `planner` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn urbe_planner_solve(planner: *mut UrbePlanner) -> UrbeStatus {
    guard(|| {
        let p = planner.as_mut().ok_or_else(|| null("planner"))?;
        p.agent.replan(&mut p.rng).ffi().map(|_| ())
    })
}

/// Copies `Q(step, state, .)` and `w(step, state, .)` of the last solve.
/// Either output may be NULL; non-NULL outputs hold `num_actions` doubles.
///
/// # Safety
/// `planner` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn urbe_planner_values(
    planner: *const UrbePlanner,
    step: usize,
    state: usize,
    q_out: *mut f64,
    w_out: *mut f64,
    num_actions: usize,
) -> UrbeStatus {
    guard(|| {
        let p = planner.as_ref().ok_or_else(|| null("planner"))?;
        let plan = p.agent.plan().ok_or_else(|| (UrbeStatus::Usage, "urbe_planner_solve has not been called".to_string()))?;
        if step == 0 || step > plan.q.horizon() || state >= plan.q.num_states() {
            return Err(invalid(format!("(step={step}, state={state}) out of range")));
        }
        if num_actions != plan.q.num_actions() {
            return Err(invalid(format!("num_actions {num_actions} != {}", plan.q.num_actions())));
        }
        if !q_out.is_null() {
            slice_mut(q_out, num_actions, "q_out")?.copy_from_slice(plan.q.row(step, state));
        }
        if !w_out.is_null() {
            slice_mut(w_out, num_actions, "w_out")?.copy_from_slice(plan.w.row(step, state));
        }
        Ok(())
    })
}

/// Chooses an action at `(step, state)` under the last solve.
///
/// # Safety
/// `planner` must be a live handle; `out_action` must be writable.
#[no_mangle]
pub unsafe extern "C" fn urbe_planner_act(planner: *mut UrbePlanner, step: usize, state: usize, out_action: *mut usize) -> UrbeStatus {
    guard(|| {
        let p = planner.as_mut().ok_or_else(|| null("planner"))?;
        let out = out_action.as_mut().ok_or_else(|| null("out_action"))?;
        if let Some(plan) = p.agent.plan() {
            if step == 0 || step > plan.q.horizon() || state >= plan.q.num_states() {
                return Err(invalid(format!("(step={step}, state={state}) out of range")));
            }
        }
        *out = p.agent.act(step, state, &mut p.rng).ffi()?;
        Ok(())
    })
}

/// Releases a planner. NULL is ignored.
///
/// # Safety
/// `planner` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn urbe_planner_free(planner: *mut UrbePlanner) {
    if !planner.is_null() {
        drop(Box::from_raw(planner));
    }
}
