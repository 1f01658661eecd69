#ifndef STADNET_H
#define STADNET_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define STADNET_BODY_JOINTS 8

#define STADNET_HAND_KEYPOINTS 21

#define STADNET_POINTS_PER_FRAME 50

#define STADNET_BODY_POSE_DIM 97

#define STADNET_HAND_POSE_DIM 54

#define STADNET_HAND_POINTS 6

#define STADNET_SEQ_LEN 40

typedef enum StadnetStatus {
  STADNET_STATUS_OK = 0,
  STADNET_STATUS_NULL_POINTER = 1,
  STADNET_STATUS_INVALID_ARGUMENT = 2,
  STADNET_STATUS_DIMENSION_MISMATCH = 3,
  STADNET_STATUS_IO = 4,
  STADNET_STATUS_PARSE = 5,
  STADNET_STATUS_CORRUPT = 6,
  STADNET_STATUS_DEGENERATE = 7,
  STADNET_STATUS_INTERNAL = 8,
} StadnetStatus;

/**
 * Trained depth estimator.
 */
typedef struct StadnetDepthNet StadnetDepthNet;

/**
 * Sliding-window skeleton filter.
 */
typedef struct StadnetFilter StadnetFilter;

/**
 * Trained gesture classifier with its standardization statistics.
 */
typedef struct StadnetGestureModel StadnetGestureModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failure on this thread; empty when none.
 * Valid until the next failing call on the same thread.
 */
const char *stadnet_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *stadnet_version(void);

/**
 * Creates a filter. `sigma <= 0` selects window / 4.
 *
 * # Safety
 * `out` must be a valid pointer to write the handle to.
 */
enum StadnetStatus stadnet_filter_new(size_t window,
                                      uint32_t rbar,
                                      double sigma,
                                      struct StadnetFilter **out);

/**
 * Pushes one frame of 50 points (8 body joints, 21 left-hand and 21
 * right-hand keypoints) as 100 doubles. Once the window is full, writes the
 * filtered center frame to `out_xy` (100 doubles, NaN for missing) and its
 * frame index to `out_index`, and sets `out_ready` to 1; otherwise sets it
 * to 0 and leaves the outputs untouched.
 *
 * # Safety
 * `filter` must come from [`stadnet_filter_new`]; `xy` and `out_xy` must hold
 * 100 doubles; `out_index` and `out_ready` must be writable.
 */
enum StadnetStatus stadnet_filter_push(struct StadnetFilter *filter,
                                       uint64_t frame_index,
                                       double fps,
                                       const double *xy,
                                       double *out_xy,
                                       uint64_t *out_index,
                                       uint8_t *out_ready);

/**
 * # Safety
 * `filter` must come from [`stadnet_filter_new`] or be null.
 */
void stadnet_filter_free(struct StadnetFilter *filter);

/**
 * Builds the 97-value body vector from 8 joints (16 doubles).
 * `out_mask` may be null; otherwise receives 97 validity flags.
 *
 * # Safety
 * `joints_xy` must hold 16 doubles and `out` 97; `out_mask`, when not null, 97 bytes.
 */
enum StadnetStatus stadnet_augment_pose(const double *joints_xy, double *out, uint8_t *out_mask);

/**
 * Builds the 54-value hand vector from the 6 chain points (shoulder,
 * elbow, wrist, palm base, middle-finger base, middle-finger tip).
 *
 * # Safety
 * `points_xy` must hold 12 doubles and `out` 54; `out_mask`, when not null, 54 bytes.
 */
enum StadnetStatus stadnet_augment_hand(const double *points_xy, double *out, uint8_t *out_mask);

/**
 * Loads a depth estimator saved by the `train-depth` command.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum StadnetStatus stadnet_depth_load(const char *path, struct StadnetDepthNet **out);

/**
 * Input width (97 for the neck estimator, 54 for hands); 0 for null.
 *
 * # Safety
 * `net` must come from [`stadnet_depth_load`] or be null.
 */
size_t stadnet_depth_input_dim(const struct StadnetDepthNet *net);

/**
 * # Safety
 * `x` must hold `len` doubles; `out` must be writable.
 */
enum StadnetStatus stadnet_depth_forward(const struct StadnetDepthNet *net,
                                         const double *x,
                                         size_t len,
                                         double *out);

/**
 * # Safety
 * `net` must come from [`stadnet_depth_load`] or be null.
 */
void stadnet_depth_free(struct StadnetDepthNet *net);

/**
 * Loads a classifier saved by the `train` command.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum StadnetStatus stadnet_gesture_load(const char *path, struct StadnetGestureModel **out);

/**
 * Number of output classes; 0 for null.
 *
 * # Safety
 * `model` must come from [`stadnet_gesture_load`] or be null.
 */
size_t stadnet_gesture_classes(const struct StadnetGestureModel *model);

/**
 * Per-frame feature width; 0 for null.
 *
 * # Safety
 * `model` must come from [`stadnet_gesture_load`] or be null.
 */
size_t stadnet_gesture_input_dim(const struct StadnetGestureModel *model);

/**
 * Classifies one 40-frame sequence. `data` holds `40 * dim` floats,
 * row-major; `mask[t]` is 1 for padding frames. When `standardize` is
 * nonzero the model's statistics are applied to the non-padding frames
 * first. Ties resolve to the lowest class id. `out_probs` may be null;
 * otherwise it receives one probability per class.
 *
 * # Safety
 * Buffers must have the sizes stated above; `out_label` and
 * `out_probability` must be writable.
 */
enum StadnetStatus stadnet_gesture_predict(const struct StadnetGestureModel *model,
                                           const float *data,
                                           const uint8_t *mask,
                                           size_t dim,
                                           uint8_t standardize,
                                           uint32_t *out_label,
                                           double *out_probability,
                                           double *out_probs);

/**
 * # Safety
 * `model` must come from [`stadnet_gesture_load`] or be null.
 */
void stadnet_gesture_free(struct StadnetGestureModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STADNET_H */
