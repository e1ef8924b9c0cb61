#ifndef TV_EULER_H
#define TV_EULER_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every exported function.
 */
typedef enum TveStatus {
  TVE_STATUS_OK = 0,
  TVE_STATUS_NULL_POINTER = 1,
  /**
   * Argument outside the domain of the operation.
   */
  TVE_STATUS_DOMAIN = 2,
  TVE_STATUS_CONFIG = 3,
  TVE_STATUS_IO = 4,
  /**
   * Quadrature, solver or mass-conservation failure.
   */
  TVE_STATUS_NUMERICAL = 5,
  TVE_STATUS_BUFFER_TOO_SMALL = 6,
  /**
   * Some row of an experiment failed; results were still written.
   */
  TVE_STATUS_INVALID_ROW = 7,
  TVE_STATUS_PANIC = 8,
} TveStatus;

typedef enum TveKernel {
  TVE_KERNEL_EPANECHNIKOV = 0,
  TVE_KERNEL_GAUSSIAN = 1,
} TveKernel;

/**
 * Fitted kernel density estimate.
 */
typedef struct TveKde TveKde;

/**
 * Endpoint sample of the randomized-time Euler scheme.
 */
typedef struct TveSample TveSample;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message, NUL-terminated and
 * truncated to `capacity` bytes, and returns the full message length
 * (excluding the NUL). A null `buffer` only queries the length.
 *
 * # Safety
 * `buffer` must be null or writable for `capacity` bytes.
 */
size_t tve_last_error_message(char *buffer, size_t capacity);

/**
 * Transition density at `z` of Brownian motion with drift `-theta sgn`
 * started at `x`, after time `t`.
 *
 * # Safety
 * `out` must be null or valid for writing one `double`.
 */
enum TveStatus tve_bang_bang_density(double theta, double t, double x, double z, double *out);

/**
 * `2 (1 + ln(T/h)) / (1 + ln(2T/h))`.
 *
 * # Safety
 * `out` must be null or valid for writing one `double`.
 */
enum TveStatus tve_theoretical_ratio(double horizon, double h, double *out);

/**
 * Trapezoidal L1 distance between `f` and `g` on sorted abscissae `x`.
 *
 * # Safety
 * `x`, `f`, `g` must be readable for `n` doubles; `out` writable for one.
 */
enum TveStatus tve_trapezoid_l1(const double *x,
                                const double *f,
                                const double *g,
                                size_t n,
                                double *out);

/**
 * Simulates `n_samples` endpoints at time `horizon` from `x0` with step
 * `h`. `drift_toml` describes the drift in the experiment config format,
 * for example `kind = "two-valued"\nalpha = -3.0\nbeta = 4.0`.
 *
 * # Safety
 * `drift_toml` must be a NUL-terminated string; `out` must be writable.
 */
enum TveStatus tve_sample_new(const char *drift_toml,
                              double x0,
                              double horizon,
                              double h,
                              size_t n_samples,
                              uint64_t seed,
                              struct TveSample **out);

/**
 * Number of stored values (samples times dimension).
 *
 * # Safety
 * `sample` must be null or a live handle.
 */
size_t tve_sample_len(const struct TveSample *sample);

/**
 * Borrowed pointer to the values, valid until the handle is freed.
 *
 * # Safety
 * `sample` must be null or a live handle.
 */
const double *tve_sample_values(const struct TveSample *sample);

/**
 * # Safety
 * `sample` must be null or a handle not yet freed.
 */
void tve_sample_free(struct TveSample *sample);

/**
 * Fits a KDE to `n` values. A positive `bandwidth` is used as is; zero
 * selects Silverman's rule and a negative value Silverman per side of
 * `split_point`.
 *
 * # Safety
 * `values` must be readable for `n` doubles; `out` must be writable.
 */
enum TveStatus tve_kde_new(const double *values,
                           size_t n,
                           enum TveKernel kernel,
                           double bandwidth,
                           double split_point,
                           struct TveKde **out);

/**
 * Evaluates the KDE at `n` points into `out`.
 *
 * # Safety
 * `kde` must be a live handle, `x` readable and `out` writable for `n`
 * doubles.
 */
enum TveStatus tve_kde_evaluate(const struct TveKde *kde, const double *x, size_t n, double *out);

/**
 * Copies the per-component bandwidths into `out` and stores their count
 * in `count`. Fails with `BufferTooSmall` (count still set) when
 * `capacity` is too small.
 *
 * # Safety
 * `kde` must be a live handle, `out` writable for `capacity` doubles and
 * `count` for one `size_t`.
 */
enum TveStatus tve_kde_bandwidths(const struct TveKde *kde,
                                  double *out,
                                  size_t capacity,
                                  size_t *count);

/**
 * # Safety
 * `kde` must be null or a handle not yet freed.
 */
void tve_kde_free(struct TveKde *kde);

/**
 * Runs the experiment config at `config_path` and writes its result
 * files into `out_dir` (the config's own output directory when null).
 * Returns `InvalidRow` when some row failed.
 *
 * # Safety
 * `config_path` must be a NUL-terminated string, `out_dir` null or one.
 */
enum TveStatus tve_run_experiment(const char *config_path, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TV_EULER_H */
