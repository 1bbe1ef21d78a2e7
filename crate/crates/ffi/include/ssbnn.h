#ifndef SSBNN_H
#define SSBNN_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum SsbnnStatus {
  SSBNN_STATUS_OK = 0,
  SSBNN_STATUS_NULL_POINTER = 1,
  SSBNN_STATUS_INVALID_ARGUMENT = 2,
  SSBNN_STATUS_SHAPE_MISMATCH = 3,
  SSBNN_STATUS_DOMAIN = 4,
  SSBNN_STATUS_IO = 5,
  SSBNN_STATUS_SCHEMA = 6,
  SSBNN_STATUS_DEGENERATE_LABELS = 7,
  SSBNN_STATUS_PANIC = 8,
  SSBNN_STATUS_OTHER = 9,
} SsbnnStatus;

/**
 * Opaque model handle.
 */
typedef struct SsbnnModel SsbnnModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *ssbnn_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ssbnn_version(void);

/**
 * Load a JSON checkpoint into a new handle written to `*out`.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum SsbnnStatus ssbnn_model_load(const char *path, struct SsbnnModel **out);

/**
 * Release a handle. NULL is ignored.
 *
 * # Safety
 * `model` must come from [`ssbnn_model_load`] and not be used afterwards.
 */
void ssbnn_model_free(struct SsbnnModel *model);

/**
 * # Safety
 * `model` and `out` must be valid pointers.
 */
enum SsbnnStatus ssbnn_model_input_dim(const struct SsbnnModel *model, size_t *out);

/**
 * Mean predictive probability over `samples` posterior draws for a
 * row-major `(rows, cols)` matrix. Writes `rows` values to `out`.
 *
 * # Safety
 * `x` must hold `rows * cols` doubles and `out` room for `rows` doubles.
 */
enum SsbnnStatus ssbnn_predict_proba(const struct SsbnnModel *model,
                                     const double *x,
                                     size_t rows,
                                     size_t cols,
                                     size_t samples,
                                     uint64_t seed,
                                     double *out);

/**
 * Integrated Gradients of the posterior-mean logit against a zero
 * baseline. Writes `len` attributions and, if non-NULL, the completeness
 * residual.
 *
 * # Safety
 * `x` and `out` must hold `len` doubles; `residual` may be NULL.
 */
enum SsbnnStatus ssbnn_integrated_gradients(const struct SsbnnModel *model,
                                            const double *x,
                                            size_t len,
                                            size_t steps,
                                            double *out,
                                            double *residual);

/**
 * Monte-Carlo estimate of the total KL with `m` draws.
 *
 * # Safety
 * `model` and `out` must be valid pointers.
 */
enum SsbnnStatus ssbnn_model_kl(const struct SsbnnModel *model,
                                size_t m,
                                uint64_t seed,
                                double *out);

/**
 * KL(Bern(lambda_q) || Bern(lambda_p)); both must lie in (0, 1).
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum SsbnnStatus ssbnn_kl_bernoulli(double lambda_q, double lambda_p, double *out);

/**
 * KL(N(mu_q, sigma_q²) || N(mu_p, sigma_p²)).
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum SsbnnStatus ssbnn_kl_gaussian(double mu_q,
                                   double sigma_q,
                                   double mu_p,
                                   double sigma_p,
                                   double *out);

/**
 * Trapezoidal ROC AUC; `labels` are 0 or 1.
 *
 * # Safety
 * `scores` and `labels` must hold `n` elements; `out` must be valid.
 */
enum SsbnnStatus ssbnn_roc_auc(const double *scores, const uint8_t *labels, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SSBNN_H */
