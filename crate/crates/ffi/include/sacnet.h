#ifndef SACNET_H
#define SACNET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum SacnetStatus {
  SACNET_STATUS_OK = 0,
  SACNET_STATUS_NULL_POINTER = 1,
  SACNET_STATUS_INVALID_ARGUMENT = 2,
  SACNET_STATUS_BUFFER_TOO_SMALL = 3,
  SACNET_STATUS_DIMENSION = 4,
  SACNET_STATUS_TOO_FEW_POINTS = 5,
  SACNET_STATUS_DATA = 6,
  SACNET_STATUS_CONFIG = 7,
  SACNET_STATUS_FORMAT = 8,
  SACNET_STATUS_INTEGRITY = 9,
  SACNET_STATUS_IO = 10,
  SACNET_STATUS_WRONG_TASK = 11,
  SACNET_STATUS_NUMERIC = 12,
  SACNET_STATUS_INTERNAL = 13,
} SacnetStatus;

/**
 * Network kind held by a model handle.
 */
typedef enum SacnetTask {
  SACNET_TASK_CLASSIFICATION = 0,
  SACNET_TASK_SEGMENTATION = 1,
  SACNET_TASK_AUTOENCODER = 2,
} SacnetTask;

/**
 * Opaque model handle.
 */
typedef struct SacnetModel SacnetModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message, NUL-terminated and
 * truncated to `capacity`, and returns the full message length in bytes.
 *
 * # Safety
 * `buffer` must be null or valid for `capacity` bytes.
 */
size_t sacnet_last_error(char *buffer, size_t capacity);

/**
 * Builds a freshly initialized model with the default schedule.
 *
 * `classes` sizes a classifier's output; `latent` and `points` shape an
 * autoencoder (`points` must factor into three decoder expansions). A
 * segmenter uses the 16-category part table.
 *
 * # Safety
 * `out` must be valid for writing one pointer.
 */
enum SacnetStatus sacnet_model_new(enum SacnetTask task,
                                   size_t classes,
                                   size_t latent,
                                   size_t points,
                                   uint64_t seed,
                                   struct SacnetModel **out);

/**
 * Loads a model from a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` valid for one pointer.
 */
enum SacnetStatus sacnet_model_load(const char *file, struct SacnetModel **out);

/**
 * Writes the model's parameters and configuration as a checkpoint
 * without optimizer state.
 *
 * # Safety
 * `model` must be a live handle and `path` a NUL-terminated string.
 */
enum SacnetStatus sacnet_model_save(const struct SacnetModel *model, const char *file);

/**
 * Releases a handle; null is ignored.
 *
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void sacnet_model_free(struct SacnetModel *model);

/**
 * # Safety
 * `model` must be a live handle and `out` valid for one value.
 */
enum SacnetStatus sacnet_model_task(const struct SacnetModel *model, enum SacnetTask *out);

/**
 * Trainable scalar count.
 *
 * # Safety
 * `model` must be a live handle and `out` valid for one value.
 */
enum SacnetStatus sacnet_model_param_count(const struct SacnetModel *model, size_t *out);

/**
 * Floating-point operations per sample of `points` inputs.
 *
 * # Safety
 * `model` must be a live handle and `out` valid for one value.
 */
enum SacnetStatus sacnet_model_flops(const struct SacnetModel *model, size_t points, uint64_t *out);

/**
 * Output width: classes, maximum parts, or latent size.
 *
 * # Safety
 * `model` must be a live handle and `out` valid for one value.
 */
enum SacnetStatus sacnet_model_output_width(const struct SacnetModel *model, size_t *out);

/**
 * Points in an autoencoder's finest decoded level.
 *
 * # Safety
 * `model` must be a live handle and `out` valid for one value.
 */
enum SacnetStatus sacnet_model_decoded_points(const struct SacnetModel *model, size_t *out);

/**
 * Evaluation-mode class logits of one cloud of `n` points.
 *
 * # Safety
 * `pts` must hold `3 n` doubles and `logits` `capacity` doubles.
 */
enum SacnetStatus sacnet_classify(const struct SacnetModel *model,
                                  const double *pts,
                                  size_t n,
                                  double *logits,
                                  size_t capacity);

/**
 * Evaluation-mode part label per point, restricted to `category`.
 *
 * # Safety
 * `pts` must hold `3 n` doubles and `labels` `capacity` values.
 */
enum SacnetStatus sacnet_segment(const struct SacnetModel *model,
                                 const double *pts,
                                 size_t n,
                                 size_t category,
                                 size_t *labels,
                                 size_t capacity);

/**
 * Latent code of one cloud.
 *
 * # Safety
 * `pts` must hold `3 n` doubles and `z` `capacity` doubles.
 */
enum SacnetStatus sacnet_encode(const struct SacnetModel *model,
                                const double *pts,
                                size_t n,
                                double *z,
                                size_t capacity);

/**
 * Decodes a latent code to the finest point level; decoder noise comes
 * from `seed`. `capacity` counts points, not doubles.
 *
 * # Safety
 * `z` must hold `latent` doubles and `out` `3 capacity` doubles.
 */
enum SacnetStatus sacnet_decode(const struct SacnetModel *model,
                                const double *z,
                                size_t latent,
                                uint64_t seed,
                                double *out,
                                size_t capacity);

/**
 * Chamfer distance between two point sets.
 *
 * # Safety
 * `a` and `b` must hold `3 na` and `3 nb` doubles; `out` one double.
 */
enum SacnetStatus sacnet_chamfer(const double *a,
                                 size_t na,
                                 const double *b,
                                 size_t nb,
                                 double *out);

/**
 * Indices of `m` farthest-point samples.
 *
 * # Safety
 * `pts` must hold `3 n` doubles and `out` `m` values.
 */
enum SacnetStatus sacnet_fps(const double *pts, size_t n, size_t m, size_t *out);

/**
 * The `k` nearest references of every query, nearest first, as row-major
 * `nq × k` indices and Euclidean distances.
 *
 * # Safety
 * `queries` and `refs` must hold `3 nq` and `3 nr` doubles; `indices` and
 * `distances` `nq k` values each.
 */
enum SacnetStatus sacnet_knn(const double *queries,
                             size_t nq,
                             const double *refs,
                             size_t nr,
                             size_t k,
                             size_t *indices,
                             double *distances);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* SACNET_H */
