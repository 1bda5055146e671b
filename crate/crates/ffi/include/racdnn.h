#ifndef RACDNN_H
#define RACDNN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes of the C interface.
 */
typedef enum RacdnnStatus {
  RACDNN_STATUS_OK = 0,
  RACDNN_STATUS_NULL_POINTER = 1,
  RACDNN_STATUS_INVALID_ARGUMENT = 2,
  RACDNN_STATUS_IO = 3,
  RACDNN_STATUS_FORMAT = 4,
  RACDNN_STATUS_NUMERIC = 5,
  RACDNN_STATUS_INTERNAL = 6,
} RacdnnStatus;

/**
 * A loaded checkpoint.
 */
typedef struct RacdnnModel RacdnnModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null if none.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *racdnn_last_error(void);

/**
 * Loads a checkpoint from `path` (UTF-8, nul-terminated) into `*out`.
 *
 * # Safety
 * `path` must be a valid C string and `out` a valid pointer.
 */
enum RacdnnStatus racdnn_model_load(const char *path, struct RacdnnModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from [`racdnn_model_load`] and not be used afterwards.
 */
void racdnn_model_free(struct RacdnnModel *model);

/**
 * Non-zero when the model includes the refinement network.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
int32_t racdnn_model_is_refined(const struct RacdnnModel *model);

/**
 * Predicts a saliency map for an interleaved 8-bit RGB image of
 * `width × height` pixels. `out` receives `width × height` values in
 * [0, 1], row-major. `iterations` of 0 uses the checkpoint's setting; 1
 * skips refinement.
 *
 * # Safety
 * `rgb` must hold `3·width·height` bytes and `out` `width·height` doubles.
 */
enum RacdnnStatus racdnn_model_infer(const struct RacdnnModel *model,
                                     const uint8_t *rgb,
                                     size_t width,
                                     size_t height,
                                     size_t iterations,
                                     double *out);

/**
 * Maximum F-measure (β² = 0.3) and mean absolute error of a predicted map
 * in [0, 1] against a mask where non-zero bytes are salient.
 *
 * # Safety
 * `pred` and `mask` must each hold `len` elements.
 */
enum RacdnnStatus racdnn_metrics(const double *pred,
                                 const uint8_t *mask,
                                 size_t len,
                                 double *max_f,
                                 double *mae);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RACDNN_H */
