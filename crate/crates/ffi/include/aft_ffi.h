#ifndef AFT_FFI_H
#define AFT_FFI_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AftStatus {
  AFT_STATUS_OK = 0,
  AFT_STATUS_NULL_POINTER = 1,
  AFT_STATUS_INVALID_ARGUMENT = 2,
  AFT_STATUS_DATA_ERROR = 3,
  AFT_STATUS_NUMERICAL_ERROR = 4,
  AFT_STATUS_IO_ERROR = 5,
  AFT_STATUS_BUFFER_TOO_SMALL = 6,
  AFT_STATUS_PANIC = 7,
} AftStatus;

typedef enum AftVariant {
  AFT_VARIANT_GEHAN = 0,
  AFT_VARIANT_WEIGHTED = 1,
  AFT_VARIANT_WEIGHTED_ROBUST = 2,
} AftVariant;

typedef enum AftScheme {
  AFT_SCHEME_UNIT = 0,
  AFT_SCHEME_INVERSE_SIZE = 1,
  AFT_SCHEME_CORRELATION_ADJUSTED = 2,
} AftScheme;

/**
 * Opaque validated dataset.
 */
typedef struct AftDataset AftDataset;

/**
 * Opaque fit result.
 */
typedef struct AftFit AftFit;

/**
 * Fit settings; start from [`aft_fit_options_default`].
 */
typedef struct AftFitOptions {
  /**
   * An [`AftVariant`] value.
   */
  uint32_t variant;
  /**
   * An [`AftScheme`] value.
   */
  uint32_t scheme;
  /**
   * Nonzero: use GR covariate weights for the robust variant.
   */
  uint8_t robust;
  /**
   * Nonzero: report the smoothed root; zero: the nonsmooth minimizer.
   */
  uint8_t smoothed;
  double alpha;
  double c_quantile;
} AftFitOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or NULL. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *aft_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *aft_version(void);

/**
 * Builds a dataset from flat arrays of `n_obs` rows.
 *
 * Rows sharing a `cluster` id form one cluster, ordered by first
 * appearance. `time` holds raw (positive) times, `event` 0/1 indicators
 * and `covariates` a row-major `n_obs × p` matrix.
 *
 * # Safety
 * Each pointer must reference at least as many elements as stated.
 */
enum AftStatus aft_dataset_new(size_t n_obs,
                               size_t p,
                               const int64_t *cluster,
                               const double *time,
                               const uint8_t *event,
                               const double *covariates,
                               struct AftDataset **out);

/**
 * Reads a CSV file; `covariates` is a comma-separated list of column names.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out` must be writable.
 */
enum AftStatus aft_dataset_from_csv(const char *path,
                                    const char *cluster_col,
                                    const char *time_col,
                                    const char *event_col,
                                    const char *covariates,
                                    struct AftDataset **out);

/**
 * # Safety
 * `dataset` must come from `aft_dataset_new`/`aft_dataset_from_csv` and not
 * have been freed. NULL is ignored.
 */
void aft_dataset_free(struct AftDataset *dataset);

/**
 * # Safety
 * `dataset` must be a live handle or NULL (returns 0).
 */
size_t aft_dataset_n_clusters(const struct AftDataset *dataset);

/**
 * # Safety
 * `dataset` must be a live handle or NULL (returns 0).
 */
size_t aft_dataset_n_obs(const struct AftDataset *dataset);

/**
 * # Safety
 * `dataset` must be a live handle or NULL (returns 0).
 */
size_t aft_dataset_p(const struct AftDataset *dataset);

/**
 * Smoothed weighted robust estimator with correlation-adjusted weights,
 * `α = 2`, `c` at the 0.95 chi-square quantile.
 */
struct AftFitOptions aft_fit_options_default(void);

/**
 * Fits the model; `options` may be NULL for the defaults.
 *
 * # Safety
 * `dataset` must be a live handle; `options` NULL or valid; `out` writable.
 */
enum AftStatus aft_fit(const struct AftDataset *dataset,
                       const struct AftFitOptions *options,
                       struct AftFit **out);

/**
 * # Safety
 * `fit` must come from `aft_fit` and not have been freed. NULL is ignored.
 */
void aft_fit_free(struct AftFit *fit);

/**
 * Number of coefficients.
 *
 * # Safety
 * `fit` must be a live handle or NULL (returns 0).
 */
size_t aft_fit_p(const struct AftFit *fit);

/**
 * Copies `β̂` into `out` (at least `p` doubles).
 *
 * # Safety
 * `fit` must be a live handle; `out` must hold `len` doubles.
 */
enum AftStatus aft_fit_beta(const struct AftFit *fit, double *out, size_t len);

/**
 * Copies the standard errors `sqrt(diag(Σ̂)/N)` into `out`.
 *
 * # Safety
 * As [`aft_fit_beta`].
 */
enum AftStatus aft_fit_std_errors(const struct AftFit *fit, double *out, size_t len);

/**
 * Copies `Σ̂` row-major into `out` (at least `p·p` doubles).
 *
 * # Safety
 * As [`aft_fit_beta`].
 */
enum AftStatus aft_fit_sigma(const struct AftFit *fit, double *out, size_t len);

/**
 * Estimated within-cluster correlation; NaN for the Gehan variant, which
 * does not estimate it.
 *
 * # Safety
 * `fit` must be a live handle or NULL (returns NaN).
 */
double aft_fit_rho_bar(const struct AftFit *fit);

/**
 * 1 when the smoothed iteration converged, 0 otherwise or for NULL.
 *
 * # Safety
 * `fit` must be a live handle or NULL.
 */
int32_t aft_fit_converged(const struct AftFit *fit);

/**
 * Outer (Γ-update) iterations of the smoothed fit.
 *
 * # Safety
 * `fit` must be a live handle or NULL (returns 0).
 */
size_t aft_fit_iterations(const struct AftFit *fit);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AFT_FFI_H */
