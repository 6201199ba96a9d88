#ifndef SLM_EVAL_H
#define SLM_EVAL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SlmMethod {
  SLM_METHOD_GLOBAL = 0,
  SLM_METHOD_LOCALIZED = 1,
  SLM_METHOD_WINDOWED = 2,
  SLM_METHOD_NORMALIZED_GLOBAL = 3,
  SLM_METHOD_NORMALIZED_LOCALIZED = 4,
} SlmMethod;

typedef enum SlmOutcome {
  SLM_OUTCOME_CORRECT = 0,
  SLM_OUTCOME_INCORRECT = 1,
  SLM_OUTCOME_TIE = 2,
} SlmOutcome;

typedef enum SlmStatus {
  SLM_STATUS_OK = 0,
  SLM_STATUS_NULL_POINTER = 1,
  SLM_STATUS_INVALID_UTF8 = 2,
  SLM_STATUS_INVALID_ARGUMENT = 3,
  SLM_STATUS_IO = 4,
  SLM_STATUS_SCHEMA = 5,
  SLM_STATUS_INVARIANT = 6,
  SLM_STATUS_INCOMPLETE_TABLE = 7,
  SLM_STATUS_TOO_MANY_PLAYERS = 8,
  SLM_STATUS_DIMENSION_MISMATCH = 9,
  SLM_STATUS_DEGENERATE = 10,
  SLM_STATUS_NO_FRAMES_IN_SCOPE = 11,
  SLM_STATUS_BUFFER_TOO_SMALL = 12,
  SLM_STATUS_INTERNAL = 13,
} SlmStatus;

// Opaque handle to a complete coalition table.
typedef struct SlmTable SlmTable;

// Opaque handle to a validated trace.
typedef struct SlmTrace SlmTrace;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static nul-terminated string.
const char *slm_version(void);

// Message of the last failed call on this thread, or null after a success.
// The pointer stays valid until the next call on the same thread.
const char *slm_last_error(void);

// Parse one trace record.
//
// # Safety
// `json` must be a nul-terminated string and `out` a writable pointer.
enum SlmStatus slm_trace_from_json(const char *json, struct SlmTrace **out);

// Load a trace file holding exactly one record.
//
// # Safety
// `path` must be a nul-terminated string and `out` a writable pointer.
enum SlmStatus slm_trace_load(const char *path, struct SlmTrace **out);

// # Safety
// `trace` must come from this library and not be used afterwards. Null is ignored.
void slm_trace_free(struct SlmTrace *trace);

// Frame count and channel count of a trace.
//
// # Safety
// `trace` must be a live handle; outputs must be writable.
enum SlmStatus slm_trace_shape(const struct SlmTrace *trace, size_t *frames, size_t *channels);

// Score one trace. A non-positive `window_seconds` keeps the default window.
//
// # Safety
// `trace` must be a live handle and `out` writable.
enum SlmStatus slm_score(const struct SlmTrace *trace,
                         enum SlmMethod method,
                         double window_seconds,
                         double *out);

// Decide a contrastive pair; the positive is correct when its score is lower.
//
// # Safety
// Both traces must be live handles and `out` writable.
enum SlmStatus slm_compare(const struct SlmTrace *positive,
                           const struct SlmTrace *negative,
                           enum SlmMethod method,
                           double window_seconds,
                           enum SlmOutcome *out);

// Parse a coalition table document.
//
// # Safety
// `json` must be a nul-terminated string and `out` a writable pointer.
enum SlmStatus slm_table_from_json(const char *json, struct SlmTable **out);

// Load a coalition table file.
//
// # Safety
// `path` must be a nul-terminated string and `out` a writable pointer.
enum SlmStatus slm_table_load(const char *path, struct SlmTable **out);

// # Safety
// `table` must come from this library and not be used afterwards. Null is ignored.
void slm_table_free(struct SlmTable *table);

// Player count and task count of a table.
//
// # Safety
// `table` must be a live handle; outputs must be writable.
enum SlmStatus slm_table_shape(const struct SlmTable *table, size_t *players, size_t *tasks);

// Shapley values of a table. `per_task` receives tasks x players values in
// task-major order and may be null when `per_task_len` is 0; `average`
// receives one value per player.
//
// # Safety
// `table` must be a live handle; buffers must hold the stated lengths.
enum SlmStatus slm_shapley(const struct SlmTable *table,
                           double *per_task,
                           size_t per_task_len,
                           double *average,
                           size_t average_len);

// Shapley values of a single game given as `2^n_players` values indexed by
// coalition bitmask; index 0 is the empty coalition.
//
// # Safety
// `values` must hold `2^n_players` values and `out` `n_players`.
enum SlmStatus slm_shapley_game(size_t n_players, const double *values, double *out);

// # Safety
// `x` and `y` must each hold `n` values and `out` be writable.
enum SlmStatus slm_pearson(const double *x, const double *y, size_t n, double *out);

// # Safety
// `x` and `y` must each hold `n` values and `out` be writable.
enum SlmStatus slm_spearman(const double *x, const double *y, size_t n, double *out);

// # Safety
// `a` and `b` must each hold `n` values and `out` be writable.
enum SlmStatus slm_cosine(const double *a, const double *b, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SLM_EVAL_H */
