#ifndef SCDL_H
#define SCDL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum ScdlStatus {
  SCDL_STATUS_OK = 0,
  SCDL_STATUS_NULL_POINTER = 1,
  SCDL_STATUS_INVALID_UTF8 = 2,
  SCDL_STATUS_FORMAT = 3,
  SCDL_STATUS_VALIDATION = 4,
  SCDL_STATUS_USAGE = 5,
  SCDL_STATUS_SHAPE = 6,
  SCDL_STATUS_CONFIG = 7,
  SCDL_STATUS_NON_FINITE = 8,
  SCDL_STATUS_IO = 9,
  SCDL_STATUS_EMPTY_BATCH = 10,
  SCDL_STATUS_PANIC = 11,
} ScdlStatus;

/**
 * A parsed CoNLL corpus and its tag vocabulary.
 */
typedef struct ScdlCorpus ScdlCorpus;

/**
 * A trained tagger.
 */
typedef struct ScdlModel ScdlModel;

/**
 * Span-level precision, recall and F1 with their counts.
 */
typedef struct ScdlScore {
  double precision;
  double recall;
  double f1;
  size_t true_positives;
  size_t predicted;
  size_t gold;
} ScdlScore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *scdl_last_error(void);

/**
 * Parses CoNLL `text` with the comma-separated `entity_types` (for example
 * `"PER,LOC,ORG"`). Tags become the gold labels of the corpus.
 *
 * # Safety
 * `text` and `entity_types` must be NUL-terminated strings and `out` a
 * valid pointer.
 */
enum ScdlStatus scdl_corpus_parse(const char *text,
                                  const char *entity_types,
                                  struct ScdlCorpus **out);

/**
 * Number of sentences, or 0 for a null handle.
 *
 * # Safety
 * `corpus` must be null or a live handle.
 */
size_t scdl_corpus_len(const struct ScdlCorpus *corpus);

/**
 * # Safety
 * `corpus` must be null or a handle not yet freed.
 */
void scdl_corpus_free(struct ScdlCorpus *corpus);

/**
 * Exact-match span scores of `predicted` against `gold` (both gold tracks).
 *
 * # Safety
 * Handles must be live and `out` valid.
 */
enum ScdlStatus scdl_span_prf1(const struct ScdlCorpus *predicted,
                               const struct ScdlCorpus *gold,
                               struct ScdlScore *out);

/**
 * Loads a checkpoint written by the `scdl` CLI or [`scdl_model_save`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum ScdlStatus scdl_model_load(const char *path, struct ScdlModel **out);

/**
 * # Safety
 * `model` must be live and `path` a NUL-terminated string.
 */
enum ScdlStatus scdl_model_save(const struct ScdlModel *model, const char *path);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void scdl_model_free(struct ScdlModel *model);

/**
 * Number of tags the model predicts (`2 * types + 1`), or 0 for null.
 *
 * # Safety
 * `model` must be null or live.
 */
size_t scdl_model_num_tags(const struct ScdlModel *model);

/**
 * Predicts BIO tag codes for `num_tokens` tokens into `tags_out`. Code 0
 * is `O`; `2t+1` and `2t+2` are `B-` and `I-` of entity type `t`.
 *
 * # Safety
 * `tokens` must point to `num_tokens` NUL-terminated strings and
 * `tags_out` to room for `num_tokens` values.
 */
enum ScdlStatus scdl_model_predict(const struct ScdlModel *model,
                                   const char *const *tokens,
                                   size_t num_tokens,
                                   uint16_t *tags_out);

/**
 * Scores the model on the gold labels of `corpus`.
 *
 * # Safety
 * Handles must be live and `out` valid.
 */
enum ScdlStatus scdl_model_evaluate(const struct ScdlModel *model,
                                    const struct ScdlCorpus *corpus,
                                    struct ScdlScore *out);

/**
 * Trains on the labels of `train_corpus` (treated as noisy) with dev-set
 * model selection on `dev_corpus`. `config` is key=value text or null for
 * defaults. Writes the best model and, when `dev_score` is non-null, its
 * dev score.
 *
 * # Safety
 * Handles must be live; `config` null or NUL-terminated; `out` valid.
 */
enum ScdlStatus scdl_train(const char *config,
                           const struct ScdlCorpus *train_corpus,
                           const struct ScdlCorpus *dev_corpus,
                           struct ScdlModel **out,
                           struct ScdlScore *dev_score);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCDL_H */
