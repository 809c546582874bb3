#ifndef SEARCHMATCH_H
#define SEARCHMATCH_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SmStatus {
  SM_STATUS_OK = 0,
  SM_STATUS_INVALID_INPUT = 1,
  SM_STATUS_NON_CONVERGENCE = 2,
  SM_STATUS_DEGENERATE = 3,
  SM_STATUS_ROOT_NOT_FOUND = 4,
  SM_STATUS_NULL_POINTER = 5,
  SM_STATUS_IO = 6,
  SM_STATUS_PANIC = 7,
} SmStatus;

// A discretized preference density.
typedef struct SmPreference SmPreference;

// An equilibrium share profile with its solver diagnostics.
typedef struct SmProfile SmProfile;

// Fixed-point solver settings. Obtain defaults from
// [`sm_solve_options_default`].
typedef struct SmSolveOptions {
  size_t max_iterations;
  double tolerance;
  double damping;
  // Anderson mixing depth; 0 for the plain damped iteration.
  size_t acceleration;
  // Nonzero to rescale each iterate to unit mass.
  int32_t renormalize;
} SmSolveOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf` (NUL terminated,
// truncated to `len`). Returns the full message length without the NUL.
//
// # Safety
// `buf` must be null or valid for `len` bytes.
size_t sm_last_error_message(char *buf, size_t len);

// Share of firm A with size-independent meeting rates.
//
// # Safety
// `out` must be valid for writes.
enum SmStatus sm_share_constant_rate(double p_a, double r_f, double *out);

// Share of firm A with meeting rates proportional to size.
//
// # Safety
// `out` must be valid for writes.
enum SmStatus sm_share_proportional(double p_a, double r_f, double *out);

// Share of firm A with affine meeting rates: the equilibrium reached from
// the frictionless allocation. `n_equilibria`, if not null, receives the
// number of equilibria found.
//
// # Safety
// `out` must be valid for writes; `n_equilibria` null or valid for writes.
enum SmStatus sm_share_affine(double p_a,
                              double r_f,
                              double alpha,
                              double *out,
                              size_t *n_equilibria);

// Friction level above which firm A never exceeds its frictionless share.
// `defined` receives 0 when no finite threshold exists (`alpha <= 1/2`).
//
// # Safety
// `out` and `defined` must be valid for writes.
enum SmStatus sm_homogenizing_threshold(double alpha, double *out, int32_t *defined);

// Smallest friction level at which firm A takes the whole market under
// proportional rates. `defined` receives 0 when `p_a <= 1/2`.
//
// # Safety
// `out` and `defined` must be valid for writes.
enum SmStatus sm_winner_takes_all_threshold(double p_a, double *out, int32_t *defined);

// # Safety
// `out` must be valid for writes.
enum SmStatus sm_preference_uniform(size_t n, struct SmPreference **out);

// Constant density `height` on the arc `[lo, hi]`.
//
// # Safety
// `out` must be valid for writes.
enum SmStatus sm_preference_block(size_t n,
                                  double lo,
                                  double hi,
                                  double height,
                                  struct SmPreference **out);

// Wrapped Gaussian density.
//
// # Safety
// `out` must be valid for writes.
enum SmStatus sm_preference_gaussian(size_t n, double center, double sd, struct SmPreference **out);

// Density given by `n` cell values on the midpoint grid; rescaled to unit
// mass.
//
// # Safety
// `values` must be valid for `n` reads; `out` valid for writes.
enum SmStatus sm_preference_from_values(const double *values, size_t n, struct SmPreference **out);

// # Safety
// `pref` must be null or come from an `sm_preference_*` constructor and
// not have been freed.
void sm_preference_free(struct SmPreference *pref);

// Number of grid cells, 0 for a null handle.
//
// # Safety
// `pref` must be null or a live handle.
size_t sm_preference_len(const struct SmPreference *pref);

// Location where both half circles carry half the preference mass.
//
// # Safety
// `pref` must be a live handle; `out` valid for writes.
enum SmStatus sm_median_point(const struct SmPreference *pref, double *out);

struct SmSolveOptions sm_solve_options_default(void);

// Closed-form equilibrium shares with size-independent meeting rates.
//
// # Safety
// `pref` must be a live handle; `out` valid for writes.
enum SmStatus sm_solve_constant_rate(const struct SmPreference *pref,
                                     double r_f,
                                     struct SmProfile **out);

// Equilibrium shares for meeting-rate slope `alpha` by fixed-point
// iteration. `opts` may be null for the defaults.
//
// # Safety
// `pref` must be a live handle; `opts` null or valid; `out` valid for
// writes.
enum SmStatus sm_solve_fixed_point(const struct SmPreference *pref,
                                   double r_f,
                                   double alpha,
                                   const struct SmSolveOptions *opts,
                                   struct SmProfile **out);

// Number of cells, 0 for a null handle.
//
// # Safety
// `profile` must be null or a live handle.
size_t sm_profile_len(const struct SmProfile *profile);

// Copies the shares into `buf`, which must hold `len >= sm_profile_len`
// values.
//
// # Safety
// `profile` must be a live handle; `buf` valid for `len` writes.
enum SmStatus sm_profile_copy(const struct SmProfile *profile, double *buf, size_t len);

// Iterations used and final residual `sup |F(s) - s|`; both 0 for closed
// forms.
//
// # Safety
// `profile` must be a live handle; the out pointers null or valid.
enum SmStatus sm_profile_diagnostics(const struct SmProfile *profile,
                                     size_t *iterations,
                                     double *residual);

// # Safety
// `profile` must be null or a handle not yet freed.
void sm_profile_free(struct SmProfile *profile);

// Matching efficiency at slope `alpha` with surplus `1 - d(x, y)`, up to
// the common positive factor.
//
// # Safety
// `pref` must be a live handle; `out` valid for writes.
enum SmStatus sm_efficiency(const struct SmPreference *pref, double r_f, double alpha, double *out);

// Utility of one agent using `alpha` while everyone else uses
// `alpha_tilde`, on the same scale as [`sm_efficiency`].
//
// # Safety
// `pref` must be a live handle; `out` valid for writes.
enum SmStatus sm_agent_utility(const struct SmPreference *pref,
                               double r_f,
                               double alpha,
                               double alpha_tilde,
                               double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEARCHMATCH_H */
