#ifndef URBE_H
#define URBE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every exported function.
typedef enum UrbeStatus {
  URBE_STATUS_OK = 0,
  URBE_STATUS_NULL_POINTER = 1,
  URBE_STATUS_INVALID_INPUT = 2,
  URBE_STATUS_CONFIG = 3,
  URBE_STATUS_USAGE = 4,
  URBE_STATUS_UNSUPPORTED = 5,
  URBE_STATUS_NON_FINITE = 6,
  URBE_STATUS_IO = 7,
  URBE_STATUS_CHECKPOINT = 8,
  URBE_STATUS_PANIC = 9,
} UrbeStatus;

// Tabular URBE planner: robust Q-values on the posterior uncertainty set
// and their URBE variance, with Thompson-style action selection.
typedef struct UrbePlanner UrbePlanner;

// Dirichlet posterior over a stationary tabular transition kernel.
typedef struct UrbePosterior UrbePosterior;

// Planner settings.
typedef struct UrbePlannerOptions {
  // L1 radius of the posterior uncertainty sets, in `[0, 2]`.
  double psi;
  // Scale of the count-based local uncertainty.
  double beta;
  double gamma;
  // Dirichlet pseudo-count on every successor.
  double prior_pseudo_count;
  // Nonzero enables the exploration bonus in `urbe_planner_act`.
  uint8_t explore;
  uint64_t seed;
} UrbePlannerOptions;

// Message of the last failure on this thread, or NULL if none.
//
// The pointer stays valid until the next failing call on the same thread.
const char *urbe_last_error_message(void);

// Minimises `p . values` over the L1 ball of `radius` around `nominal`
// intersected with the simplex. `out_minimizer` may be NULL.
//
// # Safety
// `nominal` and `values` must point to `n` doubles, `out_minimizer` (if
// non-NULL) to `n` writable doubles, `out_value` to one writable double.
enum UrbeStatus urbe_worst_case_l1(const double *nominal,
                                   const double *values,
                                   size_t n,
                                   double radius,
                                   double *out_value,
                                   double *out_minimizer);

// In-place rank-one update of the inverse covariance:
// `sigma <- sigma - (sigma phi)(sigma phi)^T / (1 + phi^T sigma phi)`.
//
// # Safety
// `sigma` must point to `dim * dim` writable doubles (row-major, symmetric)
// and `phi` to `dim` doubles.
enum UrbeStatus urbe_sherman_morrison_update(double *sigma, size_t dim, const double *phi);

// Creates a posterior with `pseudo_count` on every successor.
//
// # Safety
// `out` must point to writable storage for one handle.
enum UrbeStatus urbe_posterior_new(size_t num_states,
                                   size_t num_actions,
                                   double pseudo_count,
                                   struct UrbePosterior **out);

// Records the transition `(state, action) -> next`.
//
// # Safety
// `posterior` must be a live handle from [`urbe_posterior_new`].
enum UrbeStatus urbe_posterior_observe(struct UrbePosterior *posterior,
                                       size_t state,
                                       size_t action,
                                       size_t next);

// Writes the posterior mean of `P(. | state, action)` into `out` (length `len`
// must equal the number of states).
//
// # Safety
// `posterior` must be a live handle; `out` must point to `len` writable doubles.
enum UrbeStatus urbe_posterior_mean(const struct UrbePosterior *posterior,
                                    size_t state,
                                    size_t action,
                                    double *out,
                                    size_t len);

// Number of observations recorded so far.
//
// # Safety
// `posterior` must be a live handle; `out` must be writable.
enum UrbeStatus urbe_posterior_total_observations(const struct UrbePosterior *posterior,
                                                  uint64_t *out);

// Releases a posterior. NULL is ignored.
//
// # Safety
// `posterior` must be NULL or a handle not yet freed.
void urbe_posterior_free(struct UrbePosterior *posterior);

// Default planner settings.
struct UrbePlannerOptions urbe_planner_options_default(void);

// Creates a planner for a finite-horizon MDP with rewards `[s][a]`
// (row-major, `num_states * num_actions` entries). `terminal` (nullable)
// flags absorbing states, whose entry rewards come from `terminal_rewards`
// (nullable, zeros if NULL).
//
// # Safety
// Array arguments must point to the stated number of elements; `out` must
// be writable.
enum UrbeStatus urbe_planner_new(size_t num_states,
                                 size_t num_actions,
                                 size_t horizon,
                                 const double *rewards,
                                 const uint8_t *terminal,
                                 const double *terminal_rewards,
                                 struct UrbePlannerOptions options,
                                 struct UrbePlanner **out);

// Records `(state, action) -> next` observed at step `step` (1-based).
//
// # Safety
// `planner` must be a live handle.
enum UrbeStatus urbe_planner_observe(struct UrbePlanner *planner,
                                     size_t step,
                                     size_t state,
                                     size_t action,
                                     size_t next);

// Re-solves the robust Q-values and URBE variances from the current posterior.
//
// # Safety
// `planner` must be a live handle.
enum UrbeStatus urbe_planner_solve(struct UrbePlanner *planner);

// Copies `Q(step, state, .)` and `w(step, state, .)` of the last solve.
// Either output may be NULL; non-NULL outputs hold `num_actions` doubles.
//
// # Safety
// `planner` must be a live handle; outputs must be writable.
enum UrbeStatus urbe_planner_values(const struct UrbePlanner *planner,
                                    size_t step,
                                    size_t state,
                                    double *q_out,
                                    double *w_out,
                                    size_t num_actions);

// Chooses an action at `(step, state)` under the last solve.
//
// # Safety
// `planner` must be a live handle; `out_action` must be writable.
enum UrbeStatus urbe_planner_act(struct UrbePlanner *planner,
                                 size_t step,
                                 size_t state,
                                 size_t *out_action);

// Releases a planner. NULL is ignored.
//
// # Safety
// `planner` must be NULL or a handle not yet freed.
void urbe_planner_free(struct UrbePlanner *planner);

#endif  /* URBE_H */
