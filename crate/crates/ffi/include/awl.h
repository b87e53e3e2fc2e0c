#ifndef AWL_H
#define AWL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AwlStatus {
  AWL_STATUS_OK = 0,
  AWL_STATUS_NULL_POINTER = 1,
  AWL_STATUS_INVALID_ARGUMENT = 2,
  AWL_STATUS_BLOW_UP = 3,
  AWL_STATUS_EXPANSION_DOMAIN = 4,
  AWL_STATUS_FIT_REFUSED = 5,
  AWL_STATUS_INTERNAL = 6,
} AwlStatus;

// Full damped wave model with the stiff-exact integrator and default
// noise spectrum `b_k = k^{-4}`.
typedef struct AwlWave AwlWave;

typedef struct AwlKsResult {
  double statistic;
  double critical;
  double p_value;
  bool reject;
} AwlKsResult;

typedef struct AwlOrderFit {
  double slope;
  double intercept;
  double r_squared;
  double slope_ci_low;
  double slope_ci_high;
} AwlOrderFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer
// stays valid until the next call into the library on this thread.
const char *awl_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *awl_version(void);

// Create a wave handle with zero initial data. The noise stream is
// `(seed, trajectory)`, identical to the one the CLI uses for that
// trajectory.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum AwlStatus awl_wave_new(double nu,
                            double alpha,
                            double beta,
                            size_t modes,
                            double dt,
                            uint64_t seed,
                            uint64_t trajectory,
                            struct AwlWave **out);

// Replace the state; `u` and `v` hold `len` orthonormal coefficients and
// `len` must equal the mode count. Time is reset to zero.
//
// # Safety
// `handle` must come from [`awl_wave_new`]; `u` and `v` must point to
// `len` doubles.
enum AwlStatus awl_wave_set_state(struct AwlWave *handle,
                                  const double *u,
                                  const double *v,
                                  size_t len);

// Advance by `steps` timesteps. A non-finite state gives
// [`AwlStatus::BlowUp`] and leaves the handle at the failing step.
//
// # Safety
// `handle` must come from [`awl_wave_new`].
enum AwlStatus awl_wave_step(struct AwlWave *handle, size_t steps);

// Copy the state into `u_out` and `v_out` (each `len` doubles, `len`
// equal to the mode count) and the current time into `t_out` if non-null.
//
// # Safety
// `handle` must come from [`awl_wave_new`]; the output buffers must hold
// `len` doubles.
enum AwlStatus awl_wave_get_state(const struct AwlWave *handle,
                                  double *u_out,
                                  double *v_out,
                                  size_t len,
                                  double *t_out);

// Number of modes of the handle, or 0 for null.
//
// # Safety
// `handle` must be null or come from [`awl_wave_new`].
size_t awl_wave_modes(const struct AwlWave *handle);

// Release a handle; null is ignored.
//
// # Safety
// `handle` must be null or come from [`awl_wave_new`] and not be used
// afterwards.
void awl_wave_free(struct AwlWave *handle);

// Slow-SDE increment over a step `h` on the stochastic slow manifold.
// `amps` holds the per-mode noise amplitudes (scaled by `sigma`) and
// `dw` the Brownian increments `Δw_1..`. With `averaged` nonzero the
// averaged model is used, which ignores `nu`.
//
// # Safety
// `amps` and `dw` must point to `n_amps` and `n_dw` doubles; `out` must
// be writable.
enum AwlStatus awl_ssm_increment(double a,
                                 double nu,
                                 double beta_prime,
                                 double sigma,
                                 const double *amps,
                                 size_t n_amps,
                                 const double *dw,
                                 size_t n_dw,
                                 double h,
                                 bool averaged,
                                 double *out);

// Two-sample Kolmogorov–Smirnov test at the 5% level.
//
// # Safety
// `a` and `b` must point to `na` and `nb` doubles; `out` must be writable.
enum AwlStatus awl_ks_two_sample(const double *a,
                                 size_t na,
                                 const double *b,
                                 size_t nb,
                                 struct AwlKsResult *out);

// Log-log least-squares fit of `err` against `nu` (`n ≥ 3` positive pairs).
//
// # Safety
// `nu` and `err` must point to `n` doubles; `out` must be writable.
enum AwlStatus awl_order_fit(const double *nu,
                             const double *err,
                             size_t n,
                             struct AwlOrderFit *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AWL_H */
