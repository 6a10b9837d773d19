#ifndef RELAPSE_H
#define RELAPSE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum RelapseStatus {
  RELAPSE_STATUS_OK = 0,
  RELAPSE_STATUS_NULL_POINTER = 1,
  RELAPSE_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Configuration or spec error.
   */
  RELAPSE_STATUS_CONFIG = 3,
  /**
   * Input data rejected by the pipeline.
   */
  RELAPSE_STATUS_DATA = 4,
  /**
   * Outputs written but some units failed.
   */
  RELAPSE_STATUS_PARTIAL = 5,
  RELAPSE_STATUS_PANIC = 6,
} RelapseStatus;

/**
 * Opaque Gini random forest.
 */
typedef struct RelapseForest RelapseForest;

/**
 * Opaque L2-penalized logistic regression.
 */
typedef struct RelapseLogistic RelapseLogistic;

/**
 * Random forest hyperparameters. `max_features` 0 means the square root of
 * the feature count.
 */
typedef struct RelapseForestParams {
  size_t n_estimators;
  bool bootstrap;
  size_t max_features;
  size_t min_samples_leaf;
} RelapseForestParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until the
 * next call into this library on the same thread.
 */
const char *relapse_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *relapse_version(void);

/**
 * Area under the ROC curve; ties count one half.
 *
 * # Safety
 * `scores` and `y` must hold `n` elements; `out` must be writable.
 */
enum RelapseStatus relapse_roc_auc(const double *scores, const uint8_t *y, size_t n, double *out);

/**
 * Area under the precision-recall curve (average precision).
 *
 * # Safety
 * `scores` and `y` must hold `n` elements; `out` must be writable.
 */
enum RelapseStatus relapse_pr_auc(const double *scores, const uint8_t *y, size_t n, double *out);

/**
 * Fits a logistic model with inverse regularization strength `c`.
 *
 * # Safety
 * `x` must hold `n * p` doubles, `y` `n` bytes; `out` must be writable.
 */
enum RelapseStatus relapse_logistic_fit(const double *x,
                                        const uint8_t *y,
                                        size_t n,
                                        size_t p,
                                        double c,
                                        struct RelapseLogistic **out);

/**
 * Writes `n` positive-class probabilities to `out`.
 *
 * # Safety
 * `model` must come from `relapse_logistic_fit`; `x` must hold `n * p` doubles
 * and `out` room for `n`.
 */
enum RelapseStatus relapse_logistic_predict(const struct RelapseLogistic *model,
                                            const double *x,
                                            size_t n,
                                            size_t p,
                                            double *out);

/**
 * Copies the `p` weights and the intercept.
 *
 * # Safety
 * `weights` must have room for `p` doubles; `intercept` must be writable.
 */
enum RelapseStatus relapse_logistic_coefficients(const struct RelapseLogistic *model,
                                                 double *weights,
                                                 size_t p,
                                                 double *intercept);

/**
 * # Safety
 * `model` must be null or come from `relapse_logistic_fit`, and not be used afterwards.
 */
void relapse_logistic_free(struct RelapseLogistic *model);

/**
 * Defaults: 100 trees, bootstrap on, square-root features, leaves of at least 1.
 */
struct RelapseForestParams relapse_forest_default_params(void);

/**
 * Fits a forest; the result depends only on the inputs and `seed`.
 *
 * # Safety
 * `x` must hold `n * p` doubles, `y` `n` bytes; `params` and `out` must be valid.
 */
enum RelapseStatus relapse_forest_fit(const double *x,
                                      const uint8_t *y,
                                      size_t n,
                                      size_t p,
                                      const struct RelapseForestParams *params,
                                      uint64_t seed,
                                      struct RelapseForest **out);

/**
 * Writes `n` positive-class probabilities to `out`.
 *
 * # Safety
 * `model` must come from `relapse_forest_fit`; `x` must hold `n * p` doubles
 * and `out` room for `n`.
 */
enum RelapseStatus relapse_forest_predict(const struct RelapseForest *model,
                                          const double *x,
                                          size_t n,
                                          size_t p,
                                          double *out);

/**
 * Copies the `p` impurity importances, which sum to one.
 *
 * # Safety
 * `out` must have room for `p` doubles.
 */
enum RelapseStatus relapse_forest_importances(const struct RelapseForest *model,
                                              double *out,
                                              size_t p);

/**
 * # Safety
 * `model` must be null or come from `relapse_forest_fit`, and not be used afterwards.
 */
void relapse_forest_free(struct RelapseForest *model);

/**
 * Best achievable AUC for a synthetic spec given as TOML text.
 *
 * # Safety
 * `spec_toml` must be a NUL-terminated string; `out` must be writable.
 */
enum RelapseStatus relapse_bayes_optimal_auc(const char *spec_toml, size_t n_mc, double *out);

/**
 * Runs a command line as the `relapse` program would, e.g.
 * `{"relapse", "run", "--config", "run.toml"}`.
 *
 * # Safety
 * `argv` must hold `argc` NUL-terminated strings.
 */
enum RelapseStatus relapse_main(size_t argc, const char *const *argv);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RELAPSE_H */
