#ifndef NTK_LAB_H
#define NTK_LAB_H

#pragma once

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum NtkStatus {
  NTK_STATUS_OK = 0,
  NTK_STATUS_NULL_POINTER = 1,
  NTK_STATUS_INVALID_ARGUMENT = 2,
  NTK_STATUS_CONFIG_ERROR = 3,
  NTK_STATUS_NUMERICAL_ERROR = 4,
  NTK_STATUS_DATA_ERROR = 5,
  NTK_STATUS_IO_ERROR = 6,
  NTK_STATUS_UNDEFINED_SIMILARITY = 7,
  NTK_STATUS_VERSION_ERROR = 8,
  NTK_STATUS_DIVERGED = 9,
  NTK_STATUS_OUT_OF_RANGE = 10,
  NTK_STATUS_PANIC = 11,
} NtkStatus;

/**
 * Opaque symmetric kernel matrix.
 */
typedef struct NtkGram NtkGram;

/**
 * Opaque finished experiment.
 */
typedef struct NtkRun NtkRun;

/**
 * One probe step. Absent values (`kernel_distance_from_prev` and `velocity`
 * at the first steps, `train_loss` at step 0) are NaN.
 */
typedef struct NtkMetricRecord {
  size_t global_step;
  size_t task_index;
  size_t iteration;
  double lambda_max;
  double kernel_distance_from_init;
  double kernel_distance_from_prev;
  double velocity;
  double alignment;
  double train_loss;
  double task1_test_accuracy;
} NtkMetricRecord;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *ntk_version(void);

/**
 * Copies the calling thread's last error message into `buf` (truncated and
 * always NUL-terminated when `len > 0`). Returns the length needed including
 * the terminator, or 0 when there is no message.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t ntk_last_error_message(char *buf, size_t len);

/**
 * Builds an `n x n` kernel from row-major entries (symmetrized).
 *
 * # Safety
 * `entries` must point to `n * n` readable doubles; `out` must be writable.
 */
enum NtkStatus ntk_gram_new(const double *entries, size_t n, struct NtkGram **out);

/**
 * # Safety
 * `gram` must be null or a handle from [`ntk_gram_new`] not yet freed.
 */
void ntk_gram_free(struct NtkGram *gram);

/**
 * Largest eigenvalue after PSD repair.
 *
 * # Safety
 * `gram` must be a live handle; `out` must be writable.
 */
enum NtkStatus ntk_gram_max_eigenvalue(const struct NtkGram *gram, double *out);

/**
 * # Safety
 * `a`, `b` must be live handles; `out` must be writable.
 */
enum NtkStatus ntk_cka(const struct NtkGram *a,
                       const struct NtkGram *b,
                       bool centered,
                       double *out);

/**
 * `1 - cka(a, b)`.
 *
 * # Safety
 * `a`, `b` must be live handles; `out` must be writable.
 */
enum NtkStatus ntk_kernel_distance(const struct NtkGram *a,
                                   const struct NtkGram *b,
                                   bool centered,
                                   double *out);

/**
 * Kernel distance divided by `dt` (which must be positive).
 *
 * # Safety
 * `a`, `b` must be live handles; `out` must be writable.
 */
enum NtkStatus ntk_kernel_velocity(const struct NtkGram *a,
                                   const struct NtkGram *b,
                                   size_t dt,
                                   bool centered,
                                   double *out);

/**
 * Runs an experiment described by config-file text, in memory. A diverged
 * run still yields a handle (see [`ntk_run_diverged_at`]).
 *
 * # Safety
 * `config_text` must be a NUL-terminated string; `out` must be writable.
 */
enum NtkStatus ntk_run_from_config(const char *config_text, struct NtkRun **out);

/**
 * # Safety
 * `run` must be null or a handle from [`ntk_run_from_config`] not yet freed.
 */
void ntk_run_free(struct NtkRun *run);

/**
 * Number of records, 0 for a null handle.
 *
 * # Safety
 * `run` must be null or a live handle.
 */
size_t ntk_run_record_count(const struct NtkRun *run);

/**
 * Whether the run diverged; if so and `iteration` is non-null, writes the
 * failing iteration there.
 *
 * # Safety
 * `run` must be a live handle; `iteration` null or writable.
 */
bool ntk_run_diverged_at(const struct NtkRun *run, size_t *iteration);

/**
 * # Safety
 * `run` must be a live handle; `out` must be writable.
 */
enum NtkStatus ntk_run_get_record(const struct NtkRun *run,
                                  size_t index,
                                  struct NtkMetricRecord *out);

/**
 * Writes the run's metrics CSV to `path`.
 *
 * # Safety
 * `run` must be a live handle; `path` a NUL-terminated string.
 */
enum NtkStatus ntk_run_write_csv(const struct NtkRun *run, const char *path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NTK_LAB_H */
