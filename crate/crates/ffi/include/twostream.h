#ifndef TWOSTREAM_H
#define TWOSTREAM_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every call.
 */
typedef enum TsStatus {
  TS_STATUS_OK = 0,
  TS_STATUS_NULL_POINTER = 1,
  TS_STATUS_INVALID_ARGUMENT = 2,
  TS_STATUS_IO = 3,
  TS_STATUS_FORMAT = 4,
  TS_STATUS_VERSION = 5,
  TS_STATUS_CHECKPOINT_MISMATCH = 6,
  TS_STATUS_CONFIG = 7,
  TS_STATUS_OUT_OF_RANGE = 8,
  TS_STATUS_INTERNAL = 9,
} TsStatus;

/**
 * A loaded model with its inference and refinement settings.
 */
typedef struct TsModel TsModel;

/**
 * Detections for one image.
 */
typedef struct TsResults TsResults;

/**
 * Axis-aligned box in pixels: left, top, width, height.
 */
typedef struct TsBox {
  double x;
  double y;
  double w;
  double h;
} TsBox;

/**
 * One detection; the mask is fetched separately with [`ts_results_mask`].
 */
typedef struct TsDetection {
  uint32_t class_id;
  double score;
  struct TsBox box_regressed;
  struct TsBox box_refined;
  uint32_t mask_width;
  uint32_t mask_height;
} TsDetection;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread (empty after a success).
 * Valid until the next call on this thread.
 */
const char *ts_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ts_version(void);

/**
 * Loads a checkpoint. `config_path` may be null, in which case `config.txt`
 * next to the checkpoint is used when present, else the defaults.
 *
 * # Safety
 * Paths must be NUL-terminated strings; `out` must be writable.
 */
enum TsStatus ts_model_load(const char *checkpoint_path,
                            const char *config_path,
                            struct TsModel **out);

/**
 * # Safety
 * `model` must come from [`ts_model_load`] (or be null) and not be used afterwards.
 */
void ts_model_free(struct TsModel *model);

/**
 * Runs detection and segmentation on an interleaved RGB image with values
 * in [0, 1] (`width·height·3` floats).
 *
 * # Safety
 * `image` must point to `width·height·3` floats; `out` must be writable.
 */
enum TsStatus ts_model_infer(const struct TsModel *model,
                             const float *image,
                             uint32_t width,
                             uint32_t height,
                             struct TsResults **out);

/**
 * Number of detections (0 for a null handle).
 *
 * # Safety
 * `results` must come from [`ts_model_infer`] or be null.
 */
size_t ts_results_len(const struct TsResults *results);

/**
 * Copies detection `index` into `out`.
 *
 * # Safety
 * `results` must come from [`ts_model_infer`]; `out` must be writable.
 */
enum TsStatus ts_results_get(const struct TsResults *results,
                             size_t index,
                             struct TsDetection *out);

/**
 * Copies the row-major binary mask (0/1 bytes) of detection `index` into
 * `buf`, which must hold `mask_width·mask_height` bytes.
 *
 * # Safety
 * `buf` must be writable for `len` bytes.
 */
enum TsStatus ts_results_mask(const struct TsResults *results,
                              size_t index,
                              uint8_t *buf,
                              size_t len);

/**
 * # Safety
 * `results` must come from [`ts_model_infer`] (or be null) and not be used afterwards.
 */
void ts_results_free(struct TsResults *results);

/**
 * Refines a regressed box against a soft `height×width` mask (row-major).
 * `kernel` has `kernel_len = 2s+1` taps; `gamma = 0` returns the input box.
 *
 * # Safety
 * `mask` must hold `width·height` floats, `kernel` `kernel_len` doubles.
 */
enum TsStatus ts_refine_box(struct TsBox regressed,
                            const float *mask,
                            uint32_t width,
                            uint32_t height,
                            const double *kernel,
                            size_t kernel_len,
                            double bias,
                            double gamma,
                            struct TsBox *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TWOSTREAM_H */
