/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef ALGUIDE_H
#define ALGUIDE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every fallible function.
 */
typedef enum AlgStatus {
  ALG_STATUS_OK = 0,
  ALG_STATUS_NULL_POINTER = 1,
  ALG_STATUS_INVALID_ARGUMENT = 2,
  ALG_STATUS_IO = 3,
  ALG_STATUS_PARSE = 4,
  ALG_STATUS_HTTP = 5,
  ALG_STATUS_INVARIANT = 6,
  ALG_STATUS_CHECKPOINT = 7,
  ALG_STATUS_ANNOTATION = 8,
  ALG_STATUS_PANIC = 9,
} AlgStatus;

/**
 * A run owned by the caller.
 */
typedef struct AlgRun AlgRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread, or null. The pointer stays
 * valid until the next call into this library on the same thread.
 */
const char *alg_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *alg_version(void);

/**
 * Shannon entropy in nats of a probability row that sums to 1.
 *
 * # Safety
 * `probs` must point to `len` doubles and `out` to a writable double.
 */
enum AlgStatus alg_entropy(const double *probs, size_t len, double *out);

/**
 * Sample standard deviation of per-class counts.
 *
 * # Safety
 * `counts` must point to `len` values and `out` to a writable double.
 */
enum AlgStatus alg_class_count_stddev(const uint64_t *counts, size_t len, double *out);

/**
 * Cohen's kappa between two label sequences of equal length.
 *
 * # Safety
 * `a` and `b` must each point to `len` NUL-terminated strings.
 */
enum AlgStatus alg_cohen_kappa(const char *const *a, const char *const *b, size_t len, double *out);

/**
 * Starts a run from a JSON config (null for defaults) and JSONL corpus
 * files. A null taxonomy path selects the built-in six-class taxonomy.
 *
 * # Safety
 * String arguments must be null or NUL-terminated; `out` must be writable.
 */
enum AlgStatus alg_run_new(const char *config_json,
                           const char *unlabeled_path,
                           const char *bootstrap_path,
                           const char *taxonomy_path,
                           struct AlgRun **out);

/**
 * Restores a run from a checkpoint file.
 *
 * # Safety
 * `path` must be NUL-terminated and `out` writable.
 */
enum AlgStatus alg_run_resume(const char *path, struct AlgRun **out);

/**
 * Runs one iteration, answering from a JSONL file of `{"id", "label"}`.
 *
 * # Safety
 * `run` must come from this library; `answers_path` must be NUL-terminated.
 */
enum AlgStatus alg_run_iterate(struct AlgRun *run, const char *answers_path);

/**
 * Iterates until the budget is spent; writes the number of iterations run
 * to `iterations` when it is non-null.
 *
 * # Safety
 * `run` must come from this library; `answers_path` must be NUL-terminated.
 */
enum AlgStatus alg_run_until_budget(struct AlgRun *run,
                                    const char *answers_path,
                                    size_t *iterations);

/**
 * Completed iterations.
 *
 * # Safety
 * `run` must come from this library and `out` be writable.
 */
enum AlgStatus alg_run_iteration(const struct AlgRun *run, uint32_t *out);

/**
 * Human labels still available.
 *
 * # Safety
 * `run` must come from this library and `out` be writable.
 */
enum AlgStatus alg_run_remaining_budget(const struct AlgRun *run, size_t *out);

/**
 * Writes a checkpoint. Only valid between iterations.
 *
 * # Safety
 * `run` must come from this library; `path` must be NUL-terminated.
 */
enum AlgStatus alg_run_checkpoint(const struct AlgRun *run, const char *path);

/**
 * Evaluates the run against a labeled JSONL test split and returns the
 * report as JSON in `out`, to be released with [`alg_string_free`].
 *
 * # Safety
 * `run` must come from this library; `test_path` must be NUL-terminated;
 * `out` must be writable.
 */
enum AlgStatus alg_run_report_json(const struct AlgRun *run, const char *test_path, char **out);

/**
 * Releases a run. Null is ignored.
 *
 * # Safety
 * `run` must come from this library and not be used afterwards.
 */
void alg_run_free(struct AlgRun *run);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void alg_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ALGUIDE_H */
