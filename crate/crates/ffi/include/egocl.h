#ifndef EGOCL_H
#define EGOCL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Sampling strategies for [`egocl_sample_ego`].
 */
#define EGOCL_SAMPLER_BFS 0

#define EGOCL_SAMPLER_RWR 1

/**
 * Member slot value marking a dummy in [`egocl_sample_ego`] output.
 */
#define EGOCL_DUMMY -1

typedef enum EgoclStatus {
  EGOCL_STATUS_OK = 0,
  EGOCL_STATUS_NULL_POINTER = 1,
  EGOCL_STATUS_INVALID_UTF8 = 2,
  EGOCL_STATUS_IO = 3,
  EGOCL_STATUS_PARSE = 4,
  EGOCL_STATUS_INGEST = 5,
  EGOCL_STATUS_UNKNOWN_NODE = 6,
  EGOCL_STATUS_CONFIG = 7,
  EGOCL_STATUS_SHAPE = 8,
  EGOCL_STATUS_NON_FINITE = 9,
  EGOCL_STATUS_UNDEFINED_METRIC = 10,
  EGOCL_STATUS_MANIFEST = 11,
  EGOCL_STATUS_BUFFER_TOO_SMALL = 12,
  EGOCL_STATUS_PANIC = 13,
} EgoclStatus;

/**
 * Opaque lower-triangular AUC matrix.
 */
typedef struct EgoclAucMatrix EgoclAucMatrix;

/**
 * Opaque task graph.
 */
typedef struct EgoclGraph EgoclGraph;

/**
 * Descriptive statistics of one task graph.
 */
typedef struct EgoclStats {
  size_t num_nodes;
  size_t num_links;
  double avg_degree;
  double pos_label_pct;
} EgoclStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` as a
 * NUL-terminated string. `*needed` receives the full size including the NUL,
 * so a too small buffer can be retried.
 *
 * # Safety
 * `buf` must be valid for `len` bytes (or null with `len == 0`); `needed` may be null.
 */
enum EgoclStatus egocl_last_error(char *buf, size_t len, size_t *needed);

/**
 * Area under the ROC curve of `scores` against binary `labels`, ties counted half.
 *
 * # Safety
 * `scores` and `labels` must hold `n` elements; `out` must be writable.
 */
enum EgoclStatus egocl_auc(const double *scores, const uint8_t *labels, size_t n, double *out);

/**
 * Empty `num_tasks × num_tasks` AUC matrix.
 *
 * # Safety
 * `out` must be writable; the handle is released with [`egocl_auc_matrix_free`].
 */
enum EgoclStatus egocl_auc_matrix_new(size_t num_tasks, struct EgoclAucMatrix **out);

/**
 * Records the AUC on task `task` after training through `stage` (both 0-based, `task <= stage`).
 *
 * # Safety
 * `m` must come from [`egocl_auc_matrix_new`].
 */
enum EgoclStatus egocl_auc_matrix_set(struct EgoclAucMatrix *m,
                                      size_t stage,
                                      size_t task,
                                      double value);

/**
 * Mean of the final row.
 *
 * # Safety
 * `m` must come from [`egocl_auc_matrix_new`]; `out` must be writable.
 */
enum EgoclStatus egocl_auc_matrix_avg_auc(const struct EgoclAucMatrix *m, double *out);

/**
 * Mean drop from each task's own AUC to its final AUC; needs two or more tasks.
 *
 * # Safety
 * `m` must come from [`egocl_auc_matrix_new`]; `out` must be writable.
 */
enum EgoclStatus egocl_auc_matrix_fgt(const struct EgoclAucMatrix *m, double *out);

/**
 * # Safety
 * `m` must come from [`egocl_auc_matrix_new`] and not be used afterwards. Null is a no-op.
 */
void egocl_auc_matrix_free(struct EgoclAucMatrix *m);

/**
 * Loads a task graph from its edge, feature and label files. `seed` drives the split.
 *
 * # Safety
 * Paths must be NUL-terminated; `out` must be writable. Release with [`egocl_graph_free`].
 */
enum EgoclStatus egocl_graph_load(const char *edge_file,
                                  const char *feature_file,
                                  const char *label_file,
                                  size_t task_id,
                                  uint64_t seed,
                                  struct EgoclGraph **out);

/**
 * Builds an unlabelled graph on nodes `0..num_nodes` from `num_edges` pairs `(src[i], dst[i])`.
 *
 * # Safety
 * `src` and `dst` must hold `num_edges` elements; `out` must be writable.
 */
enum EgoclStatus egocl_graph_from_edges(size_t num_nodes,
                                        const size_t *src,
                                        const size_t *dst,
                                        size_t num_edges,
                                        uint64_t seed,
                                        struct EgoclGraph **out);

/**
 * # Safety
 * `g` must come from this library; `out` must be writable.
 */
enum EgoclStatus egocl_graph_stats(const struct EgoclGraph *g, struct EgoclStats *out);

/**
 * # Safety
 * `g` must come from this library and not be used afterwards. Null is a no-op.
 */
void egocl_graph_free(struct EgoclGraph *g);

/**
 * Extracts the size-`ego_size` ego-graph of node `ego` into `members`
 * (internal node ids, [`EGOCL_DUMMY`] for padding; ego first).
 * `restart_prob` and `seed` only apply to [`EGOCL_SAMPLER_RWR`].
 *
 * # Safety
 * `g` must come from this library; `members` must hold `ego_size` elements.
 */
enum EgoclStatus egocl_sample_ego(const struct EgoclGraph *g,
                                  size_t ego,
                                  uint32_t strategy,
                                  size_t ego_size,
                                  double restart_prob,
                                  uint64_t seed,
                                  int64_t *members);

/**
 * Runs a CLI command (`stats`, `synth`, `sample`, `static`, `continual`,
 * `sweep` or `bench`). `manifest` and `out_dir` may be null; zero `seeds` or
 * `threads` keeps the manifest value.
 *
 * # Safety
 * Non-null strings must be NUL-terminated.
 */
enum EgoclStatus egocl_run(const char *command,
                           const char *manifest,
                           const char *out_dir,
                           uint32_t seeds,
                           uint32_t threads);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EGOCL_H */
