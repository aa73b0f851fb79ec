#include <math.h>
#include <stdio.h>
#include <string.h>

#include "ckptval.h"

#define CHECK(expr)                                                            \
  do {                                                                         \
    if (!(expr)) {                                                             \
      const char *msg = ckptval_last_error();                                  \
      fprintf(stderr, "check failed at line %d: %s (%s)\n", __LINE__, #expr,   \
              msg ? msg : "no error");                                         \
      return 1;                                                                \
    }                                                                          \
  } while (0)

int main(int argc, char **argv) {
  if (argc != 4) {
    fprintf(stderr, "usage: %s QRELS RUN OUT_RUN\n", argv[0]);
    return 2;
  }
  CkptvalQrels *qrels = NULL;
  CkptvalRun *run = NULL;
  CHECK(ckptval_qrels_load(argv[1], &qrels) == CKPTVAL_STATUS_OK);
  CHECK(ckptval_run_load(argv[2], &run) == CKPTVAL_STATUS_OK);
  CHECK(ckptval_qrels_num_queries(qrels) == 2);
  CHECK(ckptval_run_num_queries(run) == 2);

  CkptvalMetricResult r;
  CHECK(ckptval_evaluate(run, qrels, "MRR@10", 1, &r) == CKPTVAL_STATUS_OK);
  CHECK(fabs(r.value - 0.75) < 1e-12);
  CHECK(r.num_queries_scored == 2 && r.num_queries_skipped == 0);
  CHECK(ckptval_evaluate(run, qrels, "MAP@10", 1, &r) ==
        CKPTVAL_STATUS_INVALID_ARGUMENT);
  CHECK(strstr(ckptval_last_error(), "MAP") != NULL);
  CHECK(ckptval_run_write(run, "c", argv[3]) == CKPTVAL_STATUS_OK);

  CkptvalRun *missing = NULL;
  CHECK(ckptval_run_load("/nonexistent/run.trec", &missing) ==
        CKPTVAL_STATUS_IO);
  CHECK(missing == NULL);

  float q[2] = {1.0f, 0.0f};
  float d[6] = {2.0f, 0.0f, 1.0f, 5.0f, 2.0f, 9.0f};
  int64_t idx[4];
  float scores[4];
  CHECK(ckptval_search_topk(q, 1, d, 3, 2, 4, idx, scores) ==
        CKPTVAL_STATUS_OK);
  CHECK(idx[0] == 0 && idx[1] == 2 && idx[2] == 1 && idx[3] == -1);
  CHECK(scores[0] == 2.0f && scores[2] == 1.0f);

  int32_t tokens[3] = {101, 7, 0};
  uint8_t mask[3] = {1, 1, 0};
  float a[4], b[4];
  uint64_t seed = ckptval_checkpoint_seed("checkpoint-77");
  CHECK(seed == 77);
  CHECK(ckptval_builtin_encode(tokens, mask, 1, 3, 4, seed, a) ==
        CKPTVAL_STATUS_OK);
  CHECK(ckptval_builtin_encode(tokens, mask, 1, 3, 4, seed, b) ==
        CKPTVAL_STATUS_OK);
  CHECK(memcmp(a, b, sizeof a) == 0);

  uint64_t steps[3] = {1, 2, 3};
  double va[3] = {0.1, 0.2, 0.3};
  double vb[3] = {0.1, 0.3, 0.2};
  CkptvalFidelity f;
  CHECK(ckptval_compare_series(steps, va, 3, steps, vb, 3, &f) ==
        CKPTVAL_STATUS_OK);
  CHECK(fabs(f.kendall_tau - 1.0 / 3.0) < 1e-12);
  CHECK(f.shared_steps == 3 && !f.argmax_agreement);

  CHECK(ckptval_qrels_load(NULL, &qrels) == CKPTVAL_STATUS_NULL_POINTER);

  ckptval_run_free(run);
  ckptval_qrels_free(qrels);
  printf("ok %s\n", ckptval_version());
  return 0;
}
