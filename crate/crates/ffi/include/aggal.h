#ifndef AGGAL_H
#define AGGAL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AggalStatus {
  AGGAL_STATUS_OK = 0,
  AGGAL_STATUS_NULL_POINTER = 1,
  AGGAL_STATUS_INVALID_ARGUMENT = 2,
  AGGAL_STATUS_DIMENSION_MISMATCH = 3,
  AGGAL_STATUS_NUMERICAL = 4,
  AGGAL_STATUS_PARSE = 5,
  AGGAL_STATUS_UNSUPPORTED = 6,
  AGGAL_STATUS_PANIC = 7,
} AggalStatus;

/**
 * Opaque feature map.
 */
typedef struct AggalBasis AggalBasis;

/**
 * Opaque model: labeled aggregated data, precisions and the current posterior.
 */
typedef struct AggalModel AggalModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *aggal_last_error_message(void);

/**
 * Frees a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void aggal_string_free(char *s);

/**
 * Samples a random-feature basis of output dimension `k` on `d` inputs.
 *
 * # Safety
 * `out` must be a valid pointer; on success it receives a handle to free
 * with [`aggal_basis_free`].
 */
enum AggalStatus aggal_basis_random_features(size_t d,
                                             size_t k,
                                             uint64_t seed,
                                             struct AggalBasis **out);

/**
 * # Safety
 * `basis` must be null or a handle from this library, freed at most once.
 */
void aggal_basis_free(struct AggalBasis *basis);

/**
 * Output dimension `K`, or 0 for a null handle.
 *
 * # Safety
 * `basis` must be null or a live handle.
 */
size_t aggal_basis_dim(const struct AggalBasis *basis);

/**
 * Evaluates the basis on `n` row-major inputs of dimension `d`, writing
 * `n * K` values (instance-major) to `out`.
 *
 * # Safety
 * `x` must hold `n * d` doubles and `out` room for `n * K`.
 */
enum AggalStatus aggal_basis_eval(const struct AggalBasis *basis,
                                  const double *x,
                                  size_t n,
                                  size_t d,
                                  double *out);

/**
 * A model in a `k`-dimensional basis with prior precision `lambda` and
 * noise precision `beta`, holding no data.
 *
 * # Safety
 * `out` must be a valid pointer; free the handle with [`aggal_model_free`].
 */
enum AggalStatus aggal_model_new(size_t k, double lambda, double beta, struct AggalModel **out);

/**
 * # Safety
 * `model` must be null or a handle from this library, freed at most once.
 */
void aggal_model_free(struct AggalModel *model);

/**
 * Adds a labeled bag (`n` instances, weights `theta`, aggregated output
 * `y`) and refits the posterior at the current precisions.
 *
 * # Safety
 * `phi` must hold `n * K` doubles and `theta` `n` doubles.
 */
enum AggalStatus aggal_model_add_bag(struct AggalModel *model,
                                     const double *phi,
                                     size_t n,
                                     const double *theta,
                                     double y);

/**
 * Runs Adam on the log marginal likelihood from the current precisions,
 * then refits. `steps == 0` or `learning_rate <= 0` selects the defaults
 * (1000, 1e-3). The final objective goes to `out_log_marginal` if non-null.
 *
 * # Safety
 * `model` must be a live handle; `out_log_marginal` null or writable.
 */
enum AggalStatus aggal_model_optimize(struct AggalModel *model,
                                      size_t steps,
                                      double learning_rate,
                                      double *out_log_marginal);

/**
 * # Safety
 * `model` must be a live handle; the outputs null or writable.
 */
enum AggalStatus aggal_model_hyper(const struct AggalModel *model, double *lambda, double *beta);

/**
 * Number of labeled bags, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t aggal_model_len(const struct AggalModel *model);

/**
 * Log marginal likelihood of the labeled bags at the current precisions.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum AggalStatus aggal_model_log_marginal(const struct AggalModel *model, double *out);

/**
 * Predictive mean and variance of one instance's output.
 *
 * # Safety
 * `phi` must hold `K` doubles; `mean` and `variance` must be writable.
 */
enum AggalStatus aggal_model_predict(const struct AggalModel *model,
                                     const double *phi,
                                     double *mean,
                                     double *variance);

/**
 * Predictive mean and variance of a bag's aggregated output.
 *
 * # Safety
 * `phi` must hold `n * K` doubles, `theta` `n` doubles; outputs writable.
 */
enum AggalStatus aggal_model_predict_aggregated(const struct AggalModel *model,
                                                const double *phi,
                                                size_t n,
                                                const double *theta,
                                                double *mean,
                                                double *variance);

/**
 * Acquisition score of one bag under `method` (a NUL-terminated name:
 * aggmi, aggent, mi, ent, qbc, emcm, maxn, minn, rand). `seed` and
 * `committee` are used by qbc, emcm and rand. `var` needs raw inputs and
 * returns [`AggalStatus::Unsupported`].
 *
 * # Safety
 * `method` must be a valid C string, `phi` hold `n * K` doubles, `theta`
 * `n` doubles and `out` be writable.
 */
enum AggalStatus aggal_model_score(const struct AggalModel *model,
                                   const char *method,
                                   const double *phi,
                                   size_t n,
                                   const double *theta,
                                   uint64_t seed,
                                   size_t committee,
                                   double *out);

/**
 * Serializes the posterior (`m`, precision factor, `lambda`, `beta`) to a
 * JSON string to free with [`aggal_string_free`].
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum AggalStatus aggal_model_to_json(const struct AggalModel *model, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AGGAL_H */
