#ifndef BELIEFSPACE_H
#define BELIEFSPACE_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BsStatus {
  BS_STATUS_OK = 0,
  BS_STATUS_NULL_POINTER = 1,
  BS_STATUS_INVALID_ARGUMENT = 2,
  BS_STATUS_NUMERICAL = 3,
  BS_STATUS_CONFIG = 4,
  BS_STATUS_PLANNING = 5,
  BS_STATUS_OUT_OF_RANGE = 6,
  BS_STATUS_PANIC = 7,
} BsStatus;

/**
 * Result of [`bs_plan`].
 */
typedef struct BsPlan BsPlan;

/**
 * Loaded beacon-world scenario with its roadmap.
 */
typedef struct BsScenario BsScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL terminated,
 * truncated to `len`). Returns the length needed including the terminator.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
uintptr_t bs_last_error(char *buf, uintptr_t len);

/**
 * Probability that two discs with Gaussian centres overlap.
 *
 * # Safety
 * Means point to 2 doubles, covariances to 4 (row-major); outputs are
 * writable or null.
 */
enum BsStatus bs_collision_probability(const double *robot_mean,
                                       const double *robot_cov,
                                       double robot_radius,
                                       const double *obstacle_mean,
                                       const double *obstacle_cov,
                                       double obstacle_radius,
                                       double tol,
                                       double *out_value,
                                       double *out_bound);

/**
 * ε-safety of a robot against `count` obstacles. Obstacle means are packed
 * as `2 * count` doubles, covariances as `4 * count`.
 *
 * # Safety
 * All arrays must have the stated lengths; outputs are writable.
 */
enum BsStatus bs_is_eps_safe(const double *robot_mean,
                             const double *robot_cov,
                             double robot_radius,
                             const double *obstacle_means,
                             const double *obstacle_covs,
                             const double *obstacle_radii,
                             uintptr_t count,
                             double eps,
                             double tol,
                             int32_t *out_safe,
                             double *out_worst);

/**
 * Loads a beacon-world scenario file and builds its roadmap.
 *
 * # Safety
 * `path` is a NUL-terminated string; `out` is writable.
 */
enum BsStatus bs_scenario_load(const char *path,
                               int32_t object_uncertainty,
                               struct BsScenario **out);

/**
 * # Safety
 * `s` is null or came from [`bs_scenario_load`] and is not used afterwards.
 */
void bs_scenario_free(struct BsScenario *s);

/**
 * Plans from the scenario's start to its goal.
 *
 * # Safety
 * `s` is a live scenario; `out` is writable.
 */
enum BsStatus bs_plan(const struct BsScenario *s, struct BsPlan **out);

/**
 * # Safety
 * `p` is null or came from [`bs_plan`] and is not used afterwards.
 */
void bs_plan_free(struct BsPlan *p);

/**
 * Number of waypoints, or 0 for a null plan.
 *
 * # Safety
 * `p` is null or a live plan.
 */
uintptr_t bs_plan_len(const struct BsPlan *p);

/**
 * Dimension of the belief state, or 0 for a null plan.
 *
 * # Safety
 * `p` is null or a live plan.
 */
uintptr_t bs_plan_state_dim(const struct BsPlan *p);

/**
 * Total cost, or NaN for a null plan.
 *
 * # Safety
 * `p` is null or a live plan.
 */
double bs_plan_total_cost(const struct BsPlan *p);

/**
 * 1 when every waypoint passed the ε-safety check.
 *
 * # Safety
 * `p` is null or a live plan.
 */
int32_t bs_plan_certified(const struct BsPlan *p);

/**
 * Copies waypoint `index`: the mean (`dim` doubles), the covariance
 * (`dim * dim`, row-major) and the collision probability. Null outputs are
 * skipped.
 *
 * # Safety
 * `p` is a live plan; non-null outputs have room for the sizes above.
 */
enum BsStatus bs_plan_waypoint(const struct BsPlan *p,
                               uintptr_t index,
                               double *out_mean,
                               double *out_cov,
                               double *out_p_collision);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BELIEFSPACE_H */
