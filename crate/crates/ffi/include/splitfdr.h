#ifndef SPLITFDR_H
#define SPLITFDR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every `sf_*` call.
 */
typedef enum SfStatus {
  SF_STATUS_OK = 0,
  SF_STATUS_NULL_POINTER = 1,
  SF_STATUS_INVALID_CONFIG = 2,
  SF_STATUS_DATA_ERROR = 3,
  SF_STATUS_NUMERIC_ERROR = 4,
  SF_STATUS_PANIC = 5,
  /**
   * The caller's output buffer is too small.
   */
  SF_STATUS_BUFFER_TOO_SMALL = 6,
} SfStatus;

/**
 * Dense sample-by-feature matrix.
 */
typedef struct SfMatrix SfMatrix;

/**
 * Outcome of `sf_select_ds` or `sf_select_mds`.
 */
typedef struct SfSelection SfSelection;

/**
 * Simulated matrix with its ground truth.
 */
typedef struct SfSimulation SfSimulation;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Version string of the library, static storage.
 */
const char *sf_version(void);

/**
 * Message for the last failed call on this thread, or NULL. Valid until
 * the next `sf_*` call on the same thread.
 */
const char *sf_last_error_message(void);

/**
 * Copies an `n x p` row-major buffer into a new matrix. Non-finite values
 * are rejected with `DataError`.
 *
 * # Safety
 * `data` must point to `n * p` readable doubles; `out` must be writable.
 */
enum SfStatus sf_matrix_new(const double *data, size_t n, size_t p, struct SfMatrix **out);

/**
 * # Safety
 * `m` must be NULL or a handle from `sf_matrix_new`/`sf_simulation_matrix`.
 */
void sf_matrix_free(struct SfMatrix *m);

/**
 * # Safety
 * `m` must be a valid matrix handle; `n` and `p` must be writable.
 */
enum SfStatus sf_matrix_dims(const struct SfMatrix *m, size_t *n, size_t *p);

/**
 * Single data-splitting selection. `config_json` may be NULL for defaults.
 *
 * # Safety
 * `m` must be a valid matrix handle, `config_json` NULL or a
 * NUL-terminated string, and `out` writable.
 */
enum SfStatus sf_select_ds(const struct SfMatrix *m,
                           const char *config_json,
                           uint64_t seed,
                           struct SfSelection **out);

/**
 * Multiple data-splitting selection. `config_json` may be NULL for defaults.
 *
 * # Safety
 * As for [`sf_select_ds`].
 */
enum SfStatus sf_select_mds(const struct SfMatrix *m,
                            const char *config_json,
                            uint64_t seed,
                            struct SfSelection **out);

/**
 * Number of selected features.
 *
 * # Safety
 * `s` must be a valid selection handle; `len` writable.
 */
enum SfStatus sf_selection_len(const struct SfSelection *s, size_t *len);

/**
 * Copies the selected 0-based feature indices, ascending.
 *
 * # Safety
 * `s` must be a valid selection handle; `buf` must hold `cap` values.
 */
enum SfStatus sf_selection_indices(const struct SfSelection *s, size_t *buf, size_t cap);

/**
 * Copies the per-feature scores (length p): mirror statistics for DS,
 * the configured inclusion rates for MDS.
 *
 * # Safety
 * `s` must be a valid selection handle; `buf` must hold `cap` values.
 */
enum SfStatus sf_selection_scores(const struct SfSelection *s, double *buf, size_t cap);

/**
 * Full result as JSON (0-based indices). Owned by the handle.
 *
 * # Safety
 * `s` must be NULL or a valid selection handle.
 */
const char *sf_selection_json(const struct SfSelection *s);

/**
 * # Safety
 * `s` must be NULL or a handle from `sf_select_*`.
 */
void sf_selection_free(struct SfSelection *s);

/**
 * Generates data from a model template given as JSON, for example
 * `{"model":"gaussian","n":100,"p":50,"p1":5,"delta":1}`.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string; `out` writable.
 */
enum SfStatus sf_simulate(const char *config_json, uint64_t seed, struct SfSimulation **out);

/**
 * Copies the simulated data into a new matrix handle.
 *
 * # Safety
 * `s` must be a valid simulation handle; `out` writable.
 */
enum SfStatus sf_simulation_matrix(const struct SfSimulation *s, struct SfMatrix **out);

/**
 * Number of relevant features.
 *
 * # Safety
 * `s` must be a valid simulation handle; `len` writable.
 */
enum SfStatus sf_simulation_relevant_len(const struct SfSimulation *s, size_t *len);

/**
 * Copies the 0-based relevant feature indices, ascending.
 *
 * # Safety
 * `s` must be a valid simulation handle; `buf` must hold `cap` values.
 */
enum SfStatus sf_simulation_relevant(const struct SfSimulation *s, size_t *buf, size_t cap);

/**
 * Copies the true latent value of each sample (length n).
 *
 * # Safety
 * `s` must be a valid simulation handle; `buf` must hold `cap` values.
 */
enum SfStatus sf_simulation_latent(const struct SfSimulation *s, double *buf, size_t cap);

/**
 * # Safety
 * `s` must be NULL or a handle from `sf_simulate`.
 */
void sf_simulation_free(struct SfSimulation *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPLITFDR_H */
