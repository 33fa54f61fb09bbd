#ifndef HRRL_H
#define HRRL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

enum HrrlStatus
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  HRRL_STATUS_OK = 0,
  HRRL_STATUS_NULL_POINTER = 1,
  HRRL_STATUS_INVALID_INPUT = 2,
  HRRL_STATUS_INVALID_CONFIG = 3,
  HRRL_STATUS_PARSE = 4,
  HRRL_STATUS_IO = 5,
  HRRL_STATUS_SNAPSHOT = 6,
  HRRL_STATUS_ORACLE_FAILURE = 7,
  HRRL_STATUS_BUFFER_TOO_SMALL = 8,
  HRRL_STATUS_PANIC = 9,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum HrrlStatus HrrlStatus;
#else
typedef int32_t HrrlStatus;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

/**
 * Parsed run configuration.
 */
typedef struct HrrlConfig HrrlConfig;

typedef struct HrrlDataset HrrlDataset;

/**
 * Trained or loaded model parameters.
 */
typedef struct HrrlModel HrrlModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread. Valid until the next
 * failing call on the same thread; never null.
 */
const char *hrrl_last_error(void);

/**
 * Euclidean projection of `v[0..len]` onto the probability simplex, written to `out`.
 *
 * # Safety
 * `v` and `out` must each point to `len` doubles.
 */
HrrlStatus hrrl_project_simplex(const double *v, size_t len, double *out);

/**
 * Parses a TOML configuration. `overrides` holds `n_overrides`
 * `section.key=value` strings (may be null when zero). Relative data paths
 * resolve against `base_dir`, or the working directory when it is null.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out` must be writable.
 */
HrrlStatus hrrl_config_new(const char *toml_text,
                           const char *const *overrides,
                           size_t n_overrides,
                           const char *base_dir,
                           struct HrrlConfig **out);

/**
 * Copies the 64-character config hash and a terminating NUL into `buf`.
 *
 * # Safety
 * `config` must be a live handle and `buf` writable for `len` bytes.
 */
HrrlStatus hrrl_config_hash(const struct HrrlConfig *config, char *buf, size_t len);

/**
 * # Safety
 * `config` must be null or a handle from `hrrl_config_new` not yet freed.
 */
void hrrl_config_free(struct HrrlConfig *config);

/**
 * Builds the training (`held_out == false`) or evaluation dataset the configuration describes.
 *
 * # Safety
 * `config` must be a live handle; `out` must be writable.
 */
HrrlStatus hrrl_dataset_from_config(const struct HrrlConfig *config,
                                    bool held_out,
                                    struct HrrlDataset **out);

/**
 * Dataset from row-major features `x[n·dim]`, labels `y[n]` and the
 * class-to-concept map `class_concept[num_classes]` (ids 1-based).
 *
 * # Safety
 * Arrays must have the stated lengths; `out` must be writable.
 */
HrrlStatus hrrl_dataset_new(const double *x,
                            size_t n,
                            size_t dim,
                            const uint32_t *y,
                            const uint32_t *class_concept,
                            size_t num_classes,
                            struct HrrlDataset **out);

/**
 * # Safety
 * `ds` must be a live handle.
 */
size_t hrrl_dataset_len(const struct HrrlDataset *ds);

/**
 * # Safety
 * `ds` must be a live handle.
 */
size_t hrrl_dataset_dim(const struct HrrlDataset *ds);

/**
 * # Safety
 * `ds` must be a live handle.
 */
size_t hrrl_dataset_num_concepts(const struct HrrlDataset *ds);

/**
 * Writes `N_k / N` for every concept into `out[0..len]`; `len` must be at
 * least the number of concepts.
 *
 * # Safety
 * `ds` must be a live handle and `out` writable for `len` doubles.
 */
HrrlStatus hrrl_dataset_reference_distribution(const struct HrrlDataset *ds,
                                               double *out,
                                               size_t len);

/**
 * # Safety
 * `ds` must be null or a live handle.
 */
void hrrl_dataset_free(struct HrrlDataset *ds);

/**
 * Trains with the configuration's `[model]`, `[train]` and `[schedule]` settings.
 *
 * # Safety
 * `config` and `ds` must be live handles; `out` must be writable.
 */
HrrlStatus hrrl_train(const struct HrrlConfig *config,
                      const struct HrrlDataset *ds,
                      struct HrrlModel **out);

/**
 * Final concept distribution of a trained model (`q0` for ERM/EL runs).
 * Writes up to `len` values and stores the number of concepts in `*written`.
 *
 * # Safety
 * `model` must be a live handle; `out` writable for `len` doubles; `written` writable.
 */
HrrlStatus hrrl_model_final_q(const struct HrrlModel *model,
                              double *out,
                              size_t len,
                              size_t *written);

/**
 * Predicted 1-based class of one input of length `dim`.
 *
 * # Safety
 * `model` must be a live handle, `x` readable for `dim` doubles, `out` writable.
 */
HrrlStatus hrrl_model_predict(const struct HrrlModel *model,
                              const double *x,
                              size_t dim,
                              uint32_t *out);

/**
 * Overall accuracy, and worst-concept accuracy and spread, on `ds`.
 *
 * # Safety
 * Handles must be live; output pointers writable (any may be null to skip).
 */
HrrlStatus hrrl_model_evaluate(const struct HrrlModel *model,
                               const struct HrrlDataset *ds,
                               double *accuracy,
                               double *worst_concept,
                               double *spread);

/**
 * # Safety
 * `model` must be a live handle; `path` NUL-terminated.
 */
HrrlStatus hrrl_model_save(const struct HrrlModel *model, const char *path);

/**
 * # Safety
 * `path` NUL-terminated; `out` writable.
 */
HrrlStatus hrrl_model_load(const char *path, struct HrrlModel **out);

/**
 * # Safety
 * `model` must be null or a live handle.
 */
void hrrl_model_free(struct HrrlModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HRRL_H */
