#ifndef IRRMAP_H
#define IRRMAP_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum IrrmapStatus {
  IRRMAP_STATUS_OK = 0,
  IRRMAP_STATUS_NULL_POINTER = 1,
  IRRMAP_STATUS_INVALID_ARGUMENT = 2,
  IRRMAP_STATUS_SHAPE_MISMATCH = 3,
  IRRMAP_STATUS_IO = 4,
  IRRMAP_STATUS_FORMAT = 5,
  IRRMAP_STATUS_GRID_MISMATCH = 6,
  IRRMAP_STATUS_OVERLAP_TOO_SMALL = 7,
  IRRMAP_STATUS_CONFIG_MISMATCH = 8,
  IRRMAP_STATUS_NUMERIC = 9,
  IRRMAP_STATUS_PANIC = 10,
} IrrmapStatus;

/**
 * A trained network.
 */
typedef struct IrrmapModel IrrmapModel;

/**
 * A composite feature stack read from disk.
 */
typedef struct IrrmapStack IrrmapStack;

/**
 * Model dimensions.
 */
typedef struct IrrmapModelInfo {
  size_t in_channels;
  size_t num_classes;
  size_t base_filters;
  size_t depth;
  /**
   * Tile sizes and overlaps must be multiples of this.
   */
  size_t tile_multiple;
  size_t min_overlap;
} IrrmapModelInfo;

/**
 * Precision, recall and f1 of one class plus overall accuracy.
 */
typedef struct IrrmapMetrics {
  double precision;
  double recall;
  double f1;
  double overall_accuracy;
} IrrmapMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next call into this library from the same thread.
 */
const char *irrmap_last_error(void);

/**
 * Library version, a static NUL-terminated string.
 */
const char *irrmap_version(void);

/**
 * Loads a model file into `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum IrrmapStatus irrmap_model_load(const char *path, struct IrrmapModel **out);

/**
 * # Safety
 * `model` must come from [`irrmap_model_load`] and not be freed twice.
 */
void irrmap_model_free(struct IrrmapModel *model);

/**
 * # Safety
 * `model` and `out` must be valid pointers.
 */
enum IrrmapStatus irrmap_model_info(const struct IrrmapModel *model, struct IrrmapModelInfo *out);

/**
 * Class probabilities for one image of `channels × height × width`
 * features, written to `probs` (`num_classes × height × width`). An
 * `overlap` of 0 uses the model's minimum.
 *
 * # Safety
 * `features` and `probs` must hold the stated number of elements.
 */
enum IrrmapStatus irrmap_predict(const struct IrrmapModel *model,
                                 const float *features,
                                 size_t channels,
                                 size_t height,
                                 size_t width,
                                 size_t tile,
                                 size_t overlap,
                                 float *probs);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum IrrmapStatus irrmap_stack_load(const char *path, struct IrrmapStack **out);

/**
 * # Safety
 * `stack` must come from [`irrmap_stack_load`] and not be freed twice.
 */
void irrmap_stack_free(struct IrrmapStack *stack);

/**
 * Channels, height and width of a stack.
 *
 * # Safety
 * All pointers must be valid.
 */
enum IrrmapStatus irrmap_stack_dims(const struct IrrmapStack *stack,
                                    size_t *channels,
                                    size_t *height,
                                    size_t *width);

/**
 * Quantized (0-255) class probabilities of `model` over a whole stack,
 * `num_classes × height × width` bytes.
 *
 * # Safety
 * `out` must hold `num_classes × height × width` bytes.
 */
enum IrrmapStatus irrmap_predict_stack(const struct IrrmapModel *model,
                                       const struct IrrmapStack *stack,
                                       size_t tile,
                                       size_t overlap,
                                       uint8_t *out);

/**
 * Per-class median and IQR over `count` member arrays of
 * `classes × height × width` quantized probabilities, plus the 1-based
 * class of the largest median per pixel (`height × width`).
 *
 * # Safety
 * `members` must point to `count` arrays of the stated size; outputs must
 * have room for their results.
 */
enum IrrmapStatus irrmap_ensemble_reduce(const uint8_t *const *members,
                                         size_t count,
                                         size_t classes,
                                         size_t height,
                                         size_t width,
                                         uint8_t *median,
                                         uint8_t *iqr,
                                         uint8_t *class_out);

/**
 * `classes × classes` confusion counts (rows actual, columns predicted)
 * over the `n` pixels whose label is non-zero. Codes run 1..=classes.
 *
 * # Safety
 * `predicted` and `labels` must hold `n` bytes; `counts` room for
 * `classes²` values.
 */
enum IrrmapStatus irrmap_confusion(const uint8_t *predicted,
                                   const uint8_t *labels,
                                   size_t n,
                                   size_t classes,
                                   uint64_t *counts);

/**
 * Metrics of class `class` (0-based) from a `classes × classes` count
 * matrix.
 *
 * # Safety
 * `counts` must hold `classes²` values and `out` be valid.
 */
enum IrrmapStatus irrmap_class_metrics(const uint64_t *counts,
                                       size_t classes,
                                       size_t class_,
                                       struct IrrmapMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IRRMAP_H */
