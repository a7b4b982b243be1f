#ifndef RTGLMM_H
#define RTGLMM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum RtStatus {
  RT_STATUS_OK = 0,
  RT_STATUS_NULL_POINTER = 1,
  /**
   * Invalid parameter or argument.
   */
  RT_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Malformed or insufficient data.
   */
  RT_STATUS_DATA = 3,
  /**
   * Non-convergence, refused reconstruction, or excessive truncation.
   */
  RT_STATUS_CONVERGENCE = 4,
  RT_STATUS_IO = 5,
  /**
   * Output buffer too small; the required size was reported.
   */
  RT_STATUS_BUFFER_TOO_SMALL = 6,
  RT_STATUS_PANIC = 7,
} RtStatus;

typedef enum RtFamily {
  RT_FAMILY_INVERSE_GAUSSIAN = 0,
  RT_FAMILY_GAMMA = 1,
} RtFamily;

/**
 * Opaque trial dataset.
 */
typedef struct RtDataset RtDataset;

/**
 * Opaque sample of first-hitting times.
 */
typedef struct RtFhtSample RtFhtSample;

/**
 * Opaque fitted model.
 */
typedef struct RtModel RtModel;

/**
 * A distribution by value: `(mu, phi)` for the inverse Gaussian,
 * `(shape, scale)` for the Gamma.
 */
typedef struct RtDistribution {
  enum RtFamily family;
  double a;
  double b;
} RtDistribution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or NULL. Valid until the next
 * call into this library on the same thread.
 */
const char *rt_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rt_version(void);

enum RtStatus rt_pdf(struct RtDistribution dist, double y, double *out);

enum RtStatus rt_cdf(struct RtDistribution dist, double y, double *out);

enum RtStatus rt_quantile(struct RtDistribution dist, double p, double *out);

/**
 * Reads a trial CSV; rejected rows are counted, not fatal.
 */
enum RtStatus rt_dataset_read_csv(const char *path, size_t level_count, struct RtDataset **out);

size_t rt_dataset_len(const struct RtDataset *dataset);

size_t rt_dataset_subject_count(const struct RtDataset *dataset);

size_t rt_dataset_rejected_total(const struct RtDataset *dataset);

void rt_dataset_free(struct RtDataset *dataset);

/**
 * Fits the GLMM to the trials with response `response`, or to all trials
 * when `response` is NULL. `nagq` 0 selects the default.
 */
enum RtStatus rt_fit(const struct RtDataset *dataset,
                     enum RtFamily family,
                     const char *response,
                     size_t nagq,
                     struct RtModel **out);

enum RtStatus rt_model_from_json(const char *json, struct RtModel **out);

/**
 * Writes the model JSON (NUL-terminated) into `buf`. `needed` receives the
 * size including the terminator; with a short or NULL buffer the call
 * returns `RT_STATUS_BUFFER_TOO_SMALL` and writes nothing.
 */
enum RtStatus rt_model_to_json(const struct RtModel *model, char *buf, size_t cap, size_t *needed);

bool rt_model_converged(const struct RtModel *model);

size_t rt_model_level_count(const struct RtModel *model);

enum RtStatus rt_model_loglik(const struct RtModel *model, double *out);

enum RtStatus rt_model_aic(const struct RtModel *model, double *out);

/**
 * Marginal mean at 1-based `level`.
 */
enum RtStatus rt_marginal_mean(const struct RtModel *model, size_t level, double *out);

/**
 * Marginal variance at 1-based `level`.
 */
enum RtStatus rt_marginal_variance(const struct RtModel *model, size_t level, double *out);

void rt_model_free(struct RtModel *model);

/**
 * IG diffusion with mean `mu` and variance `sigma2`: start `a`, drift `drift`.
 */
enum RtStatus rt_reconstruct_ig(double mu, double sigma2, double *a, double *drift);

enum RtStatus rt_simulate_ig_scheme(double mu,
                                    double phi,
                                    double delta,
                                    size_t reps,
                                    uint64_t seed,
                                    struct RtFhtSample **out);

enum RtStatus rt_simulate_gamma_scheme(double shape,
                                       double scale,
                                       double delta,
                                       size_t reps,
                                       uint64_t seed,
                                       struct RtFhtSample **out);

/**
 * Number of hitting times (truncated replicates excluded).
 */
size_t rt_fht_len(const struct RtFhtSample *sample);

size_t rt_fht_truncated(const struct RtFhtSample *sample);

/**
 * Borrowed pointer to `rt_fht_len` hitting times, valid until the sample is freed.
 */
const double *rt_fht_times(const struct RtFhtSample *sample);

void rt_fht_free(struct RtFhtSample *sample);

/**
 * One-sample Kolmogorov-Smirnov test of `n` values against `dist`.
 */
enum RtStatus rt_ks_test(const double *values,
                         size_t n,
                         struct RtDistribution dist,
                         double *statistic,
                         double *pvalue);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RTGLMM_H */
