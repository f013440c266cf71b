#ifndef IAM_H
#define IAM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes. `IAM_NUMERICAL` and `IAM_CONFIG` match the CLI exit codes.
 */
typedef enum IamStatus {
  IAM_OK = 0,
  IAM_NUMERICAL = 1,
  IAM_CONFIG = 2,
  IAM_NULL_ARGUMENT = 3,
  IAM_INVALID_ARGUMENT = 4,
  IAM_BUFFER_TOO_SMALL = 5,
  IAM_PANIC = 6,
} IamStatus;

/**
 * Loaded calibration.
 */
typedef struct IamCalibration IamCalibration;

/**
 * Solved deterministic trajectory.
 */
typedef struct IamDetSolution IamDetSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * Valid until the next call into the library from the same thread.
 */
const char *iam_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *iam_version(void);

/**
 * Loads a calibration TOML file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum IamStatus iam_calibration_load(const char *path, struct IamCalibration **out);

/**
 * Parses calibration TOML text (no `base` inheritance).
 *
 * # Safety
 * `src` must be a NUL-terminated string and `out` a valid pointer.
 */
enum IamStatus iam_calibration_parse(const char *src, struct IamCalibration **out);

/**
 * Overrides a scalar parameter, e.g. `ecs`, `pi2` or `beta_annual`.
 *
 * # Safety
 * `cal` must come from this library; `name` must be NUL-terminated.
 */
enum IamStatus iam_calibration_set(struct IamCalibration *cal, const char *name, double value);

/**
 * # Safety
 * `cal` must come from this library (or be null) and not be used again.
 */
void iam_calibration_free(struct IamCalibration *cal);

/**
 * Solves the deterministic program over `n_periods` controlled periods
 * with the fixed-savings continuation. `tol` is the projected-gradient
 * norm a solution must reach; `tol <= 0` uses the default.
 *
 * # Safety
 * `cal` must come from this library and `out` be a valid pointer.
 */
enum IamStatus iam_det_solve(const struct IamCalibration *cal,
                             size_t n_periods,
                             double tol,
                             struct IamDetSolution **out);

/**
 * Controlled periods of a solution.
 *
 * # Safety
 * `sol` must come from this library.
 */
size_t iam_det_periods(const struct IamDetSolution *sol);

/**
 * Discounted welfare of a solution.
 *
 * # Safety
 * `sol` must come from this library and `out` be a valid pointer.
 */
enum IamStatus iam_det_welfare(const struct IamDetSolution *sol, double *out);

/**
 * Copies one series into `buf`. Names: `K`, `M_AT`, `M_UO`, `M_DO`,
 * `T_AT`, `T_OC`, `C`, `mu`, `s`, `E`, `SCC`, `tax`. `*len` is always set
 * to the series length; `IAM_BUFFER_TOO_SMALL` is returned when `cap` is
 * smaller.
 *
 * # Safety
 * `buf` must hold `cap` doubles (it may be null when `cap` is 0).
 */
enum IamStatus iam_det_series(const struct IamDetSolution *sol,
                              const char *name,
                              double *buf,
                              size_t cap,
                              size_t *len);

/**
 * # Safety
 * `sol` must come from this library (or be null) and not be used again.
 */
void iam_det_free(struct IamDetSolution *sol);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IAM_H */
