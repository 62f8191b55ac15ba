#ifndef RAC_H
#define RAC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

#define RAC_OK 0

// A required pointer argument was null.
#define RAC_ERR_NULL 1

// A string argument was not valid UTF-8.
#define RAC_ERR_UTF8 2

// An argument or configuration value was out of range.
#define RAC_ERR_INVALID 3

#define RAC_ERR_IO 4

// A file was malformed or failed its integrity check.
#define RAC_ERR_FORMAT 5

// A passage id or list index does not exist.
#define RAC_ERR_NOT_FOUND 6

// A Rust panic was caught at the boundary.
#define RAC_ERR_PANIC 7

// Any other library error.
#define RAC_ERR_OTHER 8

#define RAC_ROLE_GROUNDED 0

#define RAC_ROLE_UNGROUNDED 1

#define RAC_ROLE_POLICY 2

#define RAC_ROLE_BASE_LM 3

// Ranked search results.
typedef struct RacHits RacHits;

// A BM25 passage index.
typedef struct RacIndex RacIndex;

// A checkpoint together with its vocabulary.
typedef struct RacModel RacModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call into the library.
const char *rac_last_error_message(void);

// Library version as a static string.
const char *rac_version(void);

// Releases a string returned by the library.
//
// # Safety
// `s` must come from this library and not be freed twice.
void rac_string_free(char *s);

// Chunks a JSON Lines document file into passages of at most `chunk_size`
// tokens and indexes them.
//
// # Safety
// `corpus_path` must be a NUL-terminated string; `out` must be writable.
int32_t rac_index_build(const char *corpus_path, size_t chunk_size, struct RacIndex **out);

// Loads an index written by [`rac_index_save`] or the `rac index` command.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
int32_t rac_index_load(const char *path, struct RacIndex **out);

// # Safety
// `index` must be a live handle and `path` a NUL-terminated string.
int32_t rac_index_save(const struct RacIndex *index, const char *path);

// Number of passages, or 0 for a null handle.
//
// # Safety
// `index` must be null or a live handle.
size_t rac_index_num_passages(const struct RacIndex *index);

// # Safety
// `index` must be null or a handle not yet freed.
void rac_index_free(struct RacIndex *index);

// BM25 top-`k` search. Passages with zero score are left out, so the
// result may hold fewer than `k` hits.
//
// # Safety
// `index` must be a live handle, `query` a NUL-terminated string and
// `out` writable.
int32_t rac_index_search(const struct RacIndex *index,
                         const char *query,
                         size_t k,
                         double k1,
                         double b,
                         struct RacHits **out);

// # Safety
// `hits` must be null or a live handle.
size_t rac_hits_len(const struct RacHits *hits);

// Passage id and score of hit `i`. The id pointer is owned by `hits`.
//
// # Safety
// `hits` must be a live handle; `id` and `score` must be writable.
int32_t rac_hits_get(const struct RacHits *hits, size_t i, const char **id, double *score);

// # Safety
// `hits` must be null or a handle not yet freed.
void rac_hits_free(struct RacHits *hits);

// Adapted PARENT recall of a candidate against `n` passages and an
// optional reference (may be null).
//
// # Safety
// All strings must be NUL-terminated; `passages` must hold `n` pointers.
int32_t rac_parent_recall(const char *candidate,
                          const char *const *passages,
                          size_t n,
                          const char *reference,
                          double *out);

// Share of the candidate's content units found in none of the passages.
//
// # Safety
// As for [`rac_parent_recall`].
int32_t rac_hallucination_rate(const char *candidate,
                               const char *const *passages,
                               size_t n,
                               double *out);

// Sentence BLEU-4 of a candidate against one reference.
//
// # Safety
// Both strings must be NUL-terminated; `out` must be writable.
int32_t rac_bleu(const char *candidate, const char *reference, double *out);

// ROUGE-L F-measure of a candidate against one reference.
//
// # Safety
// Both strings must be NUL-terminated; `out` must be writable.
int32_t rac_rouge_l(const char *candidate, const char *reference, double *out);

// Loads a checkpoint and the vocabulary file it was trained with.
//
// # Safety
// Both paths must be NUL-terminated; `out` must be writable.
int32_t rac_model_load(const char *checkpoint_path, const char *vocab_path, struct RacModel **out);

// Generates a clarifying question. `temperature` 0 decodes greedily;
// `top_k` 0 keeps the whole vocabulary. The result is released with
// [`rac_string_free`].
//
// # Safety
// `model` must be a live handle, `query` NUL-terminated, `passages` must
// hold `n` NUL-terminated strings and `out` must be writable.
int32_t rac_model_generate(const struct RacModel *model,
                           const char *query,
                           const char *const *passages,
                           size_t n,
                           int32_t role,
                           size_t max_len,
                           double temperature,
                           size_t top_k,
                           uint64_t seed,
                           char **out);

// # Safety
// `model` must be null or a handle not yet freed.
void rac_model_free(struct RacModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RAC_H */
