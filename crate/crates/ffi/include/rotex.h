#ifndef ROTEX_H
#define ROTEX_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum RotexStatus {
  ROTEX_STATUS_OK = 0,
  ROTEX_STATUS_NULL_POINTER = 1,
  ROTEX_STATUS_INVALID_ARGUMENT = 2,
  ROTEX_STATUS_IO = 3,
  ROTEX_STATUS_NUMERICAL = 4,
  ROTEX_STATUS_BUFFER_TOO_SMALL = 5,
  ROTEX_STATUS_PANIC = 6,
} RotexStatus;

/*
 Opaque trained model: filter bank, classifier head and input
 normalization.
 */
typedef struct RotexModel RotexModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Loads a checkpoint written by `rotex train`. On success `*out` owns a
 handle that must be released with `rotex_model_free`.

 # Safety
 `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum RotexStatus rotex_model_load(const char *path, struct RotexModel **out);

/*
 Releases a model handle. Null is ignored.

 # Safety
 `model` must come from `rotex_model_load` and not be used afterwards.
 */
void rotex_model_free(struct RotexModel *model);

/*
 Groups, rotations per group, filter side and class count of a model.

 # Safety
 `model` must be a live handle; output pointers may be null.
 */
enum RotexStatus rotex_model_info(const struct RotexModel *model,
                                  uintptr_t *groups,
                                  uintptr_t *orientations,
                                  uintptr_t *size,
                                  uintptr_t *classes);

/*
 Length of a full descriptor vector (`8 * groups`).

 # Safety
 `model` must be a live handle and `out` writable.
 */
enum RotexStatus rotex_feature_dim(const struct RotexModel *model, uintptr_t *out);

/*
 Descriptor vector of one image (the model's input normalization is
 applied first). `out_len` must be at least `rotex_feature_dim`.

 # Safety
 `pixels` must hold `rows * cols` values and `out` `out_len` values.
 */
enum RotexStatus rotex_extract_features(const struct RotexModel *model,
                                        const double *pixels,
                                        uintptr_t rows,
                                        uintptr_t cols,
                                        uintptr_t r_eval,
                                        uintptr_t grid_rows,
                                        uintptr_t grid_cols,
                                        double *out,
                                        uintptr_t out_len);

/*
 Class probabilities from the softmax head and the predicted label.
 `probs` may be null; otherwise it must hold `probs_len >= classes` values.

 # Safety
 `pixels` must hold `rows * cols` values and `label` be writable.
 */
enum RotexStatus rotex_predict(const struct RotexModel *model,
                               const double *pixels,
                               uintptr_t rows,
                               uintptr_t cols,
                               double *probs,
                               uintptr_t probs_len,
                               uintptr_t *label);

/*
 Total cross power spectral density of `x` and `y`, with `y` zero-padded
 to the size of `x`.

 # Safety
 `x` and `y` must hold `x_rows * x_cols` and `y_rows * y_cols` values.
 */
enum RotexStatus rotex_cpsd(const double *x,
                            uintptr_t x_rows,
                            uintptr_t x_cols,
                            const double *y,
                            uintptr_t y_rows,
                            uintptr_t y_cols,
                            double *out);

/*
 Message of the last failed call on this thread, or null. The pointer is
 valid until the next call into this library on the same thread.
 */
const char *rotex_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *rotex_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ROTEX_H */
