#ifndef HYPOEST_H
#define HYPOEST_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Estimation method selector for [`hypo_estimate`].
 */
enum HypoMethod
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  HYPO_METHOD_LINEARIZED = 0,
  HYPO_METHOD_QV = 1,
  HYPO_METHOD_EXPLICIT_SIGMA = 2,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum HypoMethod HypoMethod;
#else
typedef int32_t HypoMethod;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

/**
 * Status codes returned by every fallible function.
 */
enum HypoStatus
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  HYPO_STATUS_OK = 0,
  HYPO_STATUS_NULL_POINTER = 1,
  HYPO_STATUS_INVALID_ARGUMENT = 2,
  HYPO_STATUS_DIVERGED = 3,
  HYPO_STATUS_NUMERICAL = 4,
  HYPO_STATUS_OPTIMIZER = 5,
  HYPO_STATUS_BUFFER_TOO_SMALL = 6,
  HYPO_STATUS_PANIC = 7,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum HypoStatus HypoStatus;
#else
typedef int32_t HypoStatus;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

/**
 * Opaque drift model.
 */
typedef struct HypoModel HypoModel;

/**
 * Opaque observed trajectory.
 */
typedef struct HypoTrajectory HypoTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *hypo_last_error(void);

/**
 * FitzHugh–Nagumo model with known input current `s`.
 *
 * # Safety
 * `out_model` must be a valid pointer.
 */
int32_t hypo_fhn_model_new(double s, struct HypoModel **out_model);

/**
 * Linear drift `a1 = a11 x + a12 y`, `a2 = a21 x + a22 y`.
 *
 * # Safety
 * `out_model` must be a valid pointer.
 */
int32_t hypo_linear_model_new(struct HypoModel **out_model);

/**
 * Number of drift parameters of `model`, or 0 for null.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t hypo_model_n_params(const struct HypoModel *model);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void hypo_model_free(struct HypoModel *model);

/**
 * Simulates `n` local-linearization steps from `(x0, y0)`.
 *
 * # Safety
 * `theta` must point to `n_theta` doubles; handles and `out_traj` must be valid.
 */
int32_t hypo_simulate(const struct HypoModel *model,
                      const double *theta,
                      size_t n_theta,
                      double sigma,
                      double x0,
                      double y0,
                      double delta,
                      size_t n,
                      uint64_t seed,
                      struct HypoTrajectory **out_traj);

/**
 * Wraps caller-owned observations (copied) with step `delta`.
 *
 * # Safety
 * `xs` and `ys` must each point to `len` doubles.
 */
int32_t hypo_trajectory_from_arrays(const double *xs,
                                    const double *ys,
                                    size_t len,
                                    double delta,
                                    struct HypoTrajectory **out_traj);

/**
 * Number of states (`N + 1`), or 0 for null.
 *
 * # Safety
 * `traj` must be null or a live handle.
 */
size_t hypo_trajectory_len(const struct HypoTrajectory *traj);

/**
 * Sampling step, or NaN for null.
 *
 * # Safety
 * `traj` must be null or a live handle.
 */
double hypo_trajectory_delta(const struct HypoTrajectory *traj);

/**
 * Copies the states into `xs`/`ys`, each with room for `cap` doubles.
 *
 * # Safety
 * `xs` and `ys` must each point to `cap` writable doubles.
 */
int32_t hypo_trajectory_copy(const struct HypoTrajectory *traj, double *xs, double *ys, size_t cap);

/**
 * # Safety
 * `traj` must be null or a handle not yet freed.
 */
void hypo_trajectory_free(struct HypoTrajectory *traj);

/**
 * Linearized contrast at `(θ, σ²)`.
 *
 * # Safety
 * Handles must be live; `theta` must point to `n_theta` doubles.
 */
int32_t hypo_contrast(const struct HypoModel *model,
                      const struct HypoTrajectory *traj,
                      const double *theta,
                      size_t n_theta,
                      double sigma2,
                      double *out_value);

/**
 * Quadratic-variation criterion at `θ`.
 *
 * # Safety
 * Handles must be live; `theta` must point to `n_theta` doubles.
 */
int32_t hypo_qv_criterion(const struct HypoModel *model,
                          const struct HypoTrajectory *traj,
                          const double *theta,
                          size_t n_theta,
                          double *out_value);

/**
 * Explicit estimate of σ² from the rough-coordinate increments.
 *
 * # Safety
 * Handles must be live.
 */
int32_t hypo_sigma_explicit(const struct HypoModel *model,
                            const struct HypoTrajectory *traj,
                            double *out_sigma2);

/**
 * Runs `method` from `(theta0, sigma2_0)` with default optimizer options.
 * `theta_out` receives `n_theta` doubles (left untouched for
 * `ExplicitSigma`); `sigma2_out` receives σ̂².
 *
 * # Safety
 * Handles must be live; `theta0` and `theta_out` must hold `n_theta` doubles.
 */
int32_t hypo_estimate(const struct HypoModel *model,
                      const struct HypoTrajectory *traj,
                      HypoMethod method,
                      const double *theta0,
                      size_t n_theta,
                      double sigma2_0,
                      double *theta_out,
                      double *sigma2_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HYPOEST_H */
