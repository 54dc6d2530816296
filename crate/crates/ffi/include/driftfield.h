#ifndef DRIFTFIELD_H
#define DRIFTFIELD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DfCorrespondence {
  DF_CORRESPONDENCE_GRADIENT = 0,
  DF_CORRESPONDENCE_ICP = 1,
} DfCorrespondence;

typedef enum DfField {
  DF_FIELD_KDE = 0,
  /**
   * Requires clean reference frames.
   */
  DF_FIELD_ORACLE = 1,
} DfField;

typedef enum DfFusion {
  DF_FUSION_GRADIENT = 0,
  DF_FUSION_MEAN = 1,
  DF_FUSION_NONE = 2,
} DfFusion;

/**
 * Status codes returned by every fallible call.
 */
typedef enum DfStatus {
  DF_STATUS_OK = 0,
  DF_STATUS_NULL_POINTER = 1,
  DF_STATUS_INVALID_ARGUMENT = 2,
  DF_STATUS_CONFIG = 3,
  DF_STATUS_RUNTIME = 4,
  DF_STATUS_PANIC = 5,
} DfStatus;

/**
 * Opaque point cloud.
 */
typedef struct DfCloud DfCloud;

/**
 * Opaque ordered list of frames.
 */
typedef struct DfSequence DfSequence;

/**
 * Flat denoising parameters. `patch_centers == 0` keeps three-fold coverage
 * and `threads == 0` uses the global pool.
 */
typedef struct DfDenoiseConfig {
  size_t patch_size;
  size_t patch_centers;
  size_t ascent_iterations;
  double alpha0;
  double alpha_decay;
  size_t search_iterations;
  double beta0;
  double gamma0;
  double search_decay;
  double tolerance;
  double kde_bandwidth;
  double kde_truncation;
  enum DfField field;
  enum DfFusion fusion;
  enum DfCorrespondence correspondence;
  uint64_t seed;
  size_t threads;
} DfDenoiseConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length plus one, or 0 when
 * there is no error.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t df_last_error(char *buf, size_t len);

/**
 * Creates a cloud from `n` packed `x, y, z` triples.
 *
 * # Safety
 * `xyz` must be valid for `3 * n` doubles; `out` must be valid for writing.
 */
enum DfStatus df_cloud_new(const double *xyz, size_t n, struct DfCloud **out);

/**
 * Number of points, or 0 for a null handle.
 *
 * # Safety
 * `cloud` must be null or a live handle.
 */
size_t df_cloud_len(const struct DfCloud *cloud);

/**
 * Copies the coordinates into `xyz`, which must hold `3 * df_cloud_len` doubles.
 *
 * # Safety
 * `cloud` must be a live handle and `xyz` valid for `capacity` doubles.
 */
enum DfStatus df_cloud_copy_points(const struct DfCloud *cloud, double *xyz, size_t capacity);

/**
 * # Safety
 * `cloud` must be null or a handle not yet freed.
 */
void df_cloud_free(struct DfCloud *cloud);

struct DfSequence *df_sequence_new(void);

/**
 * Appends a copy of `cloud`.
 *
 * # Safety
 * Both handles must be live.
 */
enum DfStatus df_sequence_push(struct DfSequence *sequence, const struct DfCloud *cloud);

/**
 * # Safety
 * `sequence` must be null or a live handle.
 */
size_t df_sequence_len(const struct DfSequence *sequence);

/**
 * Returns a new cloud handle holding a copy of frame `index`.
 *
 * # Safety
 * `sequence` must be a live handle and `out` valid for writing.
 */
enum DfStatus df_sequence_get(const struct DfSequence *sequence,
                              size_t index,
                              struct DfCloud **out);

/**
 * # Safety
 * `sequence` must be null or a handle not yet freed.
 */
void df_sequence_free(struct DfSequence *sequence);

/**
 * Published hyperparameters.
 */
struct DfDenoiseConfig df_denoise_config_default(void);

/**
 * Hyperparameters tuned for clouds of a few thousand points.
 */
struct DfDenoiseConfig df_denoise_config_desk(void);

/**
 * Denoises every frame of `noisy`. `clean` may be null unless the oracle
 * field is selected. On success `*out` receives a new sequence handle.
 *
 * # Safety
 * Handles must be live (or null where allowed); `config` and `out` must be valid.
 */
enum DfStatus df_denoise(const struct DfSequence *noisy,
                         const struct DfSequence *clean,
                         const struct DfDenoiseConfig *config,
                         struct DfSequence **out);

/**
 * Symmetric Chamfer distance (no normalization).
 *
 * # Safety
 * Handles must be live; `out` must be valid for writing.
 */
enum DfStatus df_chamfer(const struct DfCloud *a, const struct DfCloud *b, double *out);

/**
 * Directed Hausdorff distance from `a` to `b` (no normalization).
 *
 * # Safety
 * Handles must be live; `out` must be valid for writing.
 */
enum DfStatus df_hausdorff(const struct DfCloud *a, const struct DfCloud *b, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DRIFTFIELD_H */
