#ifndef PERFREC_H
#define PERFREC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PerfrecStatus {
  PERFREC_STATUS_OK = 0,
  PERFREC_STATUS_NULL_POINTER = 1,
  PERFREC_STATUS_INVALID_ARGUMENT = 2,
  PERFREC_STATUS_CONFIG = 3,
  PERFREC_STATUS_NUMERICAL = 4,
  PERFREC_STATUS_IO = 5,
  PERFREC_STATUS_PANIC = 6,
} PerfrecStatus;

typedef enum PerfrecMethod {
  PERFREC_METHOD_BASELINE = 0,
  PERFREC_METHOD_NON_STRATEGIC = 1,
  PERFREC_METHOD_STRATEGIC = 2,
  PERFREC_METHOD_MMR = 3,
  PERFREC_METHOD_RANDOM = 4,
  PERFREC_METHOD_HYBRID = 5,
} PerfrecMethod;

/**
 * Per-round results of one trajectory.
 */
typedef struct PerfrecRecords PerfrecRecords;

/**
 * Items, true preferences and the recommendation graph.
 */
typedef struct PerfrecWorld PerfrecWorld;

/**
 * Settings of one trajectory. Start from [`perfrec_run_options_default`].
 */
typedef struct PerfrecRunOptions {
  enum PerfrecMethod method;
  /**
   * Last regularized round of a hybrid run.
   */
  size_t switch_round;
  /**
   * Fixed diversity weight, used when `target_ndcg` is negative.
   */
  double lambda;
  /**
   * NDCG the tuner aims for; negative means "use `lambda`".
   */
  double target_ndcg;
  double alpha;
  size_t k;
  size_t rounds;
  double theta_mmr;
  uint64_t seed;
} PerfrecRunOptions;

typedef struct PerfrecRound {
  size_t round;
  double lambda;
  double ndcg_test;
  double div_pre;
  double div_post;
} PerfrecRound;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *perfrec_last_error_message(void);

void perfrec_clear_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *perfrec_version(void);

/**
 * Samples a synthetic world with a uniform graph of `list_size` items per user.
 */
enum PerfrecStatus perfrec_world_new(size_t m,
                                     size_t n,
                                     size_t d,
                                     size_t list_size,
                                     double sigma_x,
                                     double sigma_u_star,
                                     uint64_t seed,
                                     struct PerfrecWorld **out);

void perfrec_world_free(struct PerfrecWorld *world);

/**
 * Writes users, items and dimension. Any out pointer may be null.
 */
enum PerfrecStatus perfrec_world_shape(const struct PerfrecWorld *world,
                                       size_t *m,
                                       size_t *n,
                                       size_t *d);

/**
 * Copies the initial items, row-major `n x d`, into `out`.
 */
enum PerfrecStatus perfrec_world_items(const struct PerfrecWorld *world, double *out, size_t len);

/**
 * Closed-form best response of one item; all vectors have length `d`.
 */
enum PerfrecStatus perfrec_best_response(const double *x,
                                         const double *v_tilde,
                                         size_t d,
                                         double alpha,
                                         double *out);

struct PerfrecRunOptions perfrec_run_options_default(void);

/**
 * Runs one retraining trajectory on `world`.
 */
enum PerfrecStatus perfrec_run(const struct PerfrecWorld *world,
                               const struct PerfrecRunOptions *options,
                               struct PerfrecRecords **out);

/**
 * Number of rounds held, 0 for a null handle.
 */
size_t perfrec_records_len(const struct PerfrecRecords *records);

enum PerfrecStatus perfrec_records_get(const struct PerfrecRecords *records,
                                       size_t index,
                                       struct PerfrecRound *out);

void perfrec_records_free(struct PerfrecRecords *records);

/**
 * Runs the verification suite; `failures` (optional) receives the number
 * of failed checks. Returns `Ok` even when checks fail.
 */
enum PerfrecStatus perfrec_verify(bool full, uint64_t seed, size_t *failures);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PERFREC_H */
