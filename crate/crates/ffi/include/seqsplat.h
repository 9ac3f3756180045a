#ifndef SEQSPLAT_H
#define SEQSPLAT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Result of every fallible call.
 */
typedef enum SeqsplatStatus {
  SEQSPLAT_STATUS_OK = 0,
  /**
   * A required pointer argument was NULL.
   */
  SEQSPLAT_STATUS_NULL_POINTER = 1,
  SEQSPLAT_STATUS_IO = 2,
  /**
   * Malformed file or text input.
   */
  SEQSPLAT_STATUS_PARSE = 3,
  /**
   * Invalid argument, configuration or state.
   */
  SEQSPLAT_STATUS_INVALID = 4,
  /**
   * Lengths or shapes disagree.
   */
  SEQSPLAT_STATUS_SHAPE = 5,
  /**
   * A Rust panic was caught at the boundary.
   */
  SEQSPLAT_STATUS_PANIC = 6,
} SeqsplatStatus;

/**
 * Opaque handle to a per-primitive feature bank.
 */
typedef struct SeqsplatFeatures SeqsplatFeatures;

/**
 * Opaque handle to a trained model with its vocabulary.
 */
typedef struct SeqsplatModel SeqsplatModel;

/**
 * Opaque handle to a decoded plan and its masks.
 */
typedef struct SeqsplatPrediction SeqsplatPrediction;

/**
 * Opaque handle to a loaded Gaussian scene.
 */
typedef struct SeqsplatScene SeqsplatScene;

/**
 * Per-step scores.
 */
typedef struct SeqsplatStepScores {
  double iou;
  double auc;
  double sim;
  double mae;
} SeqsplatStepScores;

/**
 * Sequence scores after padding the shorter side with empty frames.
 */
typedef struct SeqsplatSequenceScores {
  double siou;
  double sauc;
  double ssim;
  double smae;
  uintptr_t aligned_length;
} SeqsplatSequenceScores;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *seqsplat_version(void);

/**
 * Copies the calling thread's last error message into `buf` and returns
 * its full length. Pass `buf = NULL` to query the length.
 *
 * # Safety
 * `buf` must be NULL or point to at least `len` writable bytes.
 */
uintptr_t seqsplat_last_error(char *buf, uintptr_t len);

/**
 * Loads a binary PLY scene.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SeqsplatStatus seqsplat_scene_load(const char *path, struct SeqsplatScene **out);

/**
 * Number of primitives, or 0 for a NULL handle.
 *
 * # Safety
 * `scene` must be NULL or a live handle.
 */
uintptr_t seqsplat_scene_len(const struct SeqsplatScene *scene);

/**
 * # Safety
 * `scene` must be NULL or a handle not yet freed.
 */
void seqsplat_scene_free(struct SeqsplatScene *scene);

/**
 * Lifts the procedural 2D features of `views` renders at `width × height`
 * onto the scene's primitives.
 *
 * # Safety
 * `scene` must be a live handle; `out` must be writable.
 */
enum SeqsplatStatus seqsplat_lift(const struct SeqsplatScene *scene,
                                  uintptr_t views,
                                  uint32_t width,
                                  uint32_t height,
                                  struct SeqsplatFeatures **out);

/**
 * Rows (primitives) of the bank, or 0 for NULL.
 *
 * # Safety
 * `bank` must be NULL or a live handle.
 */
uintptr_t seqsplat_features_len(const struct SeqsplatFeatures *bank);

/**
 * Channels per primitive, or 0 for NULL.
 *
 * # Safety
 * `bank` must be NULL or a live handle.
 */
uintptr_t seqsplat_features_dim(const struct SeqsplatFeatures *bank);

/**
 * Copies the row-major `len × dim` values into `buf`, which must hold
 * exactly `n` doubles.
 *
 * # Safety
 * `bank` must be a live handle and `buf` must point to `n` writable doubles.
 */
enum SeqsplatStatus seqsplat_features_copy(const struct SeqsplatFeatures *bank,
                                           double *buf,
                                           uintptr_t n);

/**
 * # Safety
 * `bank` must be NULL or a handle not yet freed.
 */
void seqsplat_features_free(struct SeqsplatFeatures *bank);

/**
 * Loads a model directory written by `seqsplat train`.
 *
 * # Safety
 * `dir` must be a NUL-terminated string; `out` must be writable.
 */
enum SeqsplatStatus seqsplat_model_load(const char *dir, struct SeqsplatModel **out);

/**
 * # Safety
 * `model` must be NULL or a handle not yet freed.
 */
void seqsplat_model_free(struct SeqsplatModel *model);

/**
 * Plans `instruction` greedily and decodes one mask per `<SEG>`.
 *
 * `features` may be NULL: a model trained with features then lifts them
 * itself with its stored settings; one trained without ignores them.
 *
 * # Safety
 * `model` and `scene` must be live handles, `features` NULL or live,
 * `instruction` NUL-terminated and `out` writable.
 */
enum SeqsplatStatus seqsplat_model_predict(const struct SeqsplatModel *model,
                                           const struct SeqsplatScene *scene,
                                           const struct SeqsplatFeatures *features,
                                           const char *instruction,
                                           uintptr_t max_steps,
                                           struct SeqsplatPrediction **out);

/**
 * Number of predicted steps, or 0 for NULL.
 *
 * # Safety
 * `pred` must be NULL or a live handle.
 */
uintptr_t seqsplat_prediction_steps(const struct SeqsplatPrediction *pred);

/**
 * Copies the planner's decoded text into `buf`; returns its full length.
 *
 * # Safety
 * `pred` must be NULL or live; `buf` NULL or `len` writable bytes.
 */
uintptr_t seqsplat_prediction_text(const struct SeqsplatPrediction *pred, char *buf, uintptr_t len);

/**
 * Copies the probabilities of step `step` into `buf` of `n` doubles, where
 * `n` must equal the scene's primitive count.
 *
 * # Safety
 * `pred` must be live and `buf` must point to `n` writable doubles.
 */
enum SeqsplatStatus seqsplat_prediction_mask(const struct SeqsplatPrediction *pred,
                                             uintptr_t step,
                                             double *buf,
                                             uintptr_t n);

/**
 * # Safety
 * `pred` must be NULL or a handle not yet freed.
 */
void seqsplat_prediction_free(struct SeqsplatPrediction *pred);

/**
 * IoU, AUC, SIM and MAE of one predicted mask against ground truth, both of
 * length `n`.
 *
 * # Safety
 * `pred` and `gt` must point to `n` doubles; `out` must be writable.
 */
enum SeqsplatStatus seqsplat_step_scores(const double *pred,
                                         const double *gt,
                                         uintptr_t n,
                                         struct SeqsplatStepScores *out);

/**
 * Sequential scores of `t_pred` predicted masks against `t_gt` ground-truth
 * masks, each row-major with `n` values per mask.
 *
 * # Safety
 * `pred` must point to `t_pred · n` doubles, `gt` to `t_gt · n`, and `out`
 * must be writable.
 */
enum SeqsplatStatus seqsplat_sequential_scores(const double *pred,
                                               uintptr_t t_pred,
                                               const double *gt,
                                               uintptr_t t_gt,
                                               uintptr_t n,
                                               struct SeqsplatSequenceScores *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEQSPLAT_H */
