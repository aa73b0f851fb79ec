#ifndef CKPTVAL_H
#define CKPTVAL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum CkptvalStatus {
  CKPTVAL_STATUS_OK = 0,
  CKPTVAL_STATUS_NULL_POINTER = 1,
  CKPTVAL_STATUS_INVALID_UTF8 = 2,
  CKPTVAL_STATUS_INVALID_ARGUMENT = 3,
  CKPTVAL_STATUS_IO = 4,
  CKPTVAL_STATUS_PARSE = 5,
  CKPTVAL_STATUS_EVALUATION = 6,
  CKPTVAL_STATUS_SPLIT = 7,
  CKPTVAL_STATUS_INTERNAL = 8,
} CkptvalStatus;

/**
 * Parsed relevance judgments.
 */
typedef struct CkptvalQrels CkptvalQrels;

/**
 * Per-query rankings, as read from or written to a TREC run file.
 */
typedef struct CkptvalRun CkptvalRun;

typedef struct CkptvalMetricResult {
  double value;
  size_t num_queries_scored;
  size_t num_queries_skipped;
} CkptvalMetricResult;

typedef struct CkptvalSubsetStats {
  size_t unique_passages;
  size_t gold_missing_from_corpus;
  size_t gold_outside_depth;
  size_t queries_covered;
} CkptvalSubsetStats;

typedef struct CkptvalFidelity {
  double kendall_tau;
  double max_abs_diff;
  double mean_signed_diff;
  bool argmax_agreement;
  size_t shared_steps;
} CkptvalFidelity;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into this library from the same thread.
 */
const char *ckptval_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ckptval_version(void);

/**
 * Reads a TREC qrel file.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum CkptvalStatus ckptval_qrels_load(const char *path, struct CkptvalQrels **out);

/**
 * # Safety
 * `qrels` must be null or a pointer from [`ckptval_qrels_load`] not yet freed.
 */
void ckptval_qrels_free(struct CkptvalQrels *qrels);

/**
 * Number of judged queries, 0 for a null handle.
 *
 * # Safety
 * `qrels` must be null or a live handle.
 */
size_t ckptval_qrels_num_queries(const struct CkptvalQrels *qrels);

/**
 * Reads a TREC run file; rankings are re-sorted canonically.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum CkptvalStatus ckptval_run_load(const char *path, struct CkptvalRun **out);

/**
 * # Safety
 * `run` must be null or a pointer from this library not yet freed.
 */
void ckptval_run_free(struct CkptvalRun *run);

/**
 * # Safety
 * `run` must be null or a live handle.
 */
size_t ckptval_run_num_queries(const struct CkptvalRun *run);

/**
 * Writes `run` in TREC format with the given tag.
 *
 * # Safety
 * `run` must be a live handle; `tag` and `path` valid NUL-terminated strings.
 */
enum CkptvalStatus ckptval_run_write(const struct CkptvalRun *run,
                                     const char *tag,
                                     const char *path);

/**
 * Evaluates one metric such as `"MRR@10"` over `run`.
 *
 * # Safety
 * Handles must be live, `metric` a valid string, `out` a valid pointer.
 */
enum CkptvalStatus ckptval_evaluate(const struct CkptvalRun *run,
                                    const struct CkptvalQrels *qrels,
                                    const char *metric,
                                    int32_t relevance_threshold,
                                    struct CkptvalMetricResult *out);

/**
 * Exact top-k inner-product search over row-major f32 matrices.
 *
 * For query `i`, slots `i*k .. i*k+k` of `out_indices` receive document row
 * indices in rank order (ties to the smaller index) and `out_scores` their
 * scores; unused slots get index -1 and score 0 when `num_docs < k`.
 *
 * # Safety
 * `queries` holds `num_queries*dim` floats, `docs` holds `num_docs*dim`,
 * and both outputs hold `num_queries*k` elements.
 */
enum CkptvalStatus ckptval_search_topk(const float *queries,
                                       size_t num_queries,
                                       const float *docs,
                                       size_t num_docs,
                                       size_t dim,
                                       size_t k,
                                       int64_t *out_indices,
                                       float *out_scores);

/**
 * Deterministic built-in embeddings for `rows` padded token rows of length
 * `len`; writes `rows*dim` floats to `out`.
 *
 * # Safety
 * `tokens` and `mask` hold `rows*len` elements; `out` holds `rows*dim`.
 */
enum CkptvalStatus ckptval_builtin_encode(const int32_t *tokens,
                                          const uint8_t *mask,
                                          size_t rows,
                                          size_t len,
                                          size_t dim,
                                          uint64_t seed,
                                          float *out);

/**
 * Seed the built-in encoder uses for a checkpoint name. Returns 0 for null
 * or non-UTF-8 input.
 *
 * # Safety
 * `name` must be null or a valid NUL-terminated string.
 */
uint64_t ckptval_checkpoint_seed(const char *name);

/**
 * Writes `output_dir/subset_depth<depth>.jsonl` from the corpus in
 * `candidate_dir`: the top `depth` of every ranking plus all gold passages.
 *
 * # Safety
 * Strings must be valid, handles live, `out` null or valid.
 */
enum CkptvalStatus ckptval_split(const char *candidate_dir,
                                 const struct CkptvalRun *run,
                                 const struct CkptvalQrels *qrels,
                                 size_t depth,
                                 int32_t relevance_threshold,
                                 const char *output_dir,
                                 struct CkptvalSubsetStats *out);

/**
 * Compares two step-indexed metric series over their shared steps.
 * A repeated step keeps its last value.
 *
 * # Safety
 * Each steps/values pair holds `len_*` elements; `out` is a valid pointer.
 */
enum CkptvalStatus ckptval_compare_series(const uint64_t *steps_a,
                                          const double *values_a,
                                          size_t len_a,
                                          const uint64_t *steps_b,
                                          const double *values_b,
                                          size_t len_b,
                                          struct CkptvalFidelity *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CKPTVAL_H */
