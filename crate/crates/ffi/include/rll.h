#ifndef RLL_H
#define RLL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RllStatus {
  RLL_STATUS_OK = 0,
  RLL_STATUS_NULL_ARGUMENT = 1,
  RLL_STATUS_INVALID_ARGUMENT = 2,
  RLL_STATUS_IO = 3,
  RLL_STATUS_PARSE = 4,
  RLL_STATUS_MISMATCH = 5,
  RLL_STATUS_NUMERIC = 6,
  RLL_STATUS_BUDGET_EXCEEDED = 7,
  RLL_STATUS_BUFFER_TOO_SMALL = 8,
  RLL_STATUS_PANIC = 9,
  RLL_STATUS_OTHER = 10,
} RllStatus;

typedef enum RllFitMethod {
  RLL_FIT_METHOD_UNIFORM_GRID_LEAST_MAX = 0,
  RLL_FIT_METHOD_LEGENDRE_PROJECTION = 1,
} RllFitMethod;

typedef enum RllMetric {
  RLL_METRIC_ONE_MINUS_COSINE = 0,
  RLL_METRIC_EUCLIDEAN = 1,
} RllMetric;

/**
 * Opaque snapshot handle.
 */
typedef struct RllSnapshot RllSnapshot;

/**
 * Size summary of a polynomial system. Exact values are not exposed here;
 * the base-2 logarithms cover every input size.
 */
typedef struct RllSummary {
  double per_equation_degree_log2;
  double bezout_log2;
  double shub_smale_log2;
  /**
   * K - N; negative when overdetermined.
   */
  int64_t solution_dim;
} RllSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *rll_version(void);

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next call into the library from this thread.
 */
const char *rll_last_error_message(void);

/**
 * # Safety
 * `out` must be NULL or point to writable memory for one `RllSummary`.
 */
enum RllStatus rll_summarize(uint64_t l,
                             uint64_t d,
                             uint64_t n,
                             uint64_t k,
                             struct RllSummary *out);

/**
 * Fits a degree-`degree` polynomial to ReLU on `[-bound, bound]` and writes
 * its `degree + 1` coefficients, lowest degree first.
 *
 * # Safety
 * `coefficients` must hold `capacity` doubles; `sup_error` may be NULL.
 */
enum RllStatus rll_fit_relu_polynomial(size_t degree,
                                       double bound,
                                       enum RllFitMethod method,
                                       double *coefficients,
                                       size_t capacity,
                                       double *sup_error);

/**
 * Classical MDS of a row-major `n x n` dissimilarity matrix into `dim`
 * coordinates per item, written row-major to `points`.
 *
 * # Safety
 * `dissimilarities` must hold `n * n` doubles and `points` `n * dim`;
 * `strain` may be NULL.
 */
enum RllStatus rll_classical_mds(size_t n,
                                 const double *dissimilarities,
                                 size_t dim,
                                 double *points,
                                 double *strain);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum RllStatus rll_snapshot_load(const char *path, struct RllSnapshot **out);

/**
 * # Safety
 * `snapshot` must come from `rll_snapshot_load`; `path` must be a
 * NUL-terminated string.
 */
enum RllStatus rll_snapshot_save(const struct RllSnapshot *snapshot, const char *path);

/**
 * Releases a handle. NULL is ignored.
 *
 * # Safety
 * `snapshot` must come from `rll_snapshot_load` and not be used afterwards.
 */
void rll_snapshot_free(struct RllSnapshot *snapshot);

/**
 * # Safety
 * `snapshot` must be a live handle and `out` writable.
 */
enum RllStatus rll_snapshot_epoch(const struct RllSnapshot *snapshot, uint64_t *out);

/**
 * # Safety
 * `snapshot` must be a live handle and `out` writable.
 */
enum RllStatus rll_snapshot_array_count(const struct RllSnapshot *snapshot, size_t *out);

/**
 * Name of array `index`, or NULL when out of range. Owned by the handle.
 *
 * # Safety
 * `snapshot` must be a live handle.
 */
const char *rll_snapshot_array_name(const struct RllSnapshot *snapshot, size_t index);

/**
 * # Safety
 * `snapshot` must be a live handle and `out` writable.
 */
enum RllStatus rll_snapshot_array_len(const struct RllSnapshot *snapshot,
                                      size_t index,
                                      size_t *out);

/**
 * Copies array `index` into `buffer`.
 *
 * # Safety
 * `snapshot` must be a live handle and `buffer` hold `capacity` doubles.
 */
enum RllStatus rll_snapshot_array_copy(const struct RllSnapshot *snapshot,
                                       size_t index,
                                       double *buffer,
                                       size_t capacity);

/**
 * Pairwise dissimilarity of `n` snapshots over all weight layers, written
 * row-major to `out` (`n * n` doubles). Undefined entries are NaN.
 *
 * # Safety
 * `snapshots` must hold `n` live handles and `out` `n * n` doubles.
 */
enum RllStatus rll_snapshot_dissimilarity(const struct RllSnapshot *const *snapshots,
                                          size_t n,
                                          enum RllMetric metric,
                                          double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RLL_H */
