#ifndef SIGHTGRASP_H
#define SIGHTGRASP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum SgStatus {
  SG_STATUS_OK = 0,
  SG_STATUS_NULL_POINTER = 1,
  SG_STATUS_INVALID_ARGUMENT = 2,
  SG_STATUS_IO = 3,
  SG_STATUS_BLINK_FRAME = 4,
  SG_STATUS_ILL_CONDITIONED = 5,
  SG_STATUS_GAZE_OUT_OF_BOUNDS = 6,
  SG_STATUS_DETECTION_FAILED = 7,
  SG_STATUS_MODEL_ERROR = 8,
  SG_STATUS_PANIC = 99,
} SgStatus;

// Opaque dense grasp maps.
typedef struct SgMaps SgMaps;

// Opaque grasp network.
typedef struct SgModel SgModel;

// Opaque camera rig.
typedef struct SgRig SgRig;

typedef struct SgFusionConfig {
  double sigma_g;
  double min_quality;
  double fixed_height;
} SgFusionConfig;

typedef struct SgPixel {
  double u;
  double v;
} SgPixel;

// Pupil ellipse: tilt is the major-axis direction in radians.
typedef struct SgEllipse {
  struct SgPixel center;
  double semi_major;
  double semi_minor;
  double tilt;
} SgEllipse;

// Features from one eye camera; `valid == false` marks a blink.
typedef struct SgEyeObservation {
  struct SgEllipse pupil;
  struct SgPixel glint;
  bool valid;
} SgEyeObservation;

typedef struct SgGaze {
  double origin[3];
  double direction[3];
  // Scene pixel; meaningful only when `in_scene`.
  struct SgPixel scene_px;
  bool in_scene;
  double condition;
} SgGaze;

// Oriented grasp rectangle, angle in radians.
typedef struct SgRect {
  struct SgPixel center;
  double theta;
  double width;
  double height;
} SgRect;

typedef struct SgSelection {
  struct SgRect grasp;
  double score;
  struct SgPixel gaze;
  bool confident;
} SgSelection;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. Valid until the
// next call into the library on the same thread.
const char *sg_last_error(void);

// Library version as a static nul-terminated string.
const char *sg_version(void);

// Default fusion settings.
struct SgFusionConfig sg_fusion_config_default(void);

// Built-in rig.
enum SgStatus sg_rig_default(struct SgRig **out);

// Rig from a JSON file.
//
// # Safety
// `path` must be a nul-terminated string; `out` must be writable.
enum SgStatus sg_rig_load(const char *path, struct SgRig **out);

// # Safety
// `rig` must come from this library and not be used afterwards.
void sg_rig_free(struct SgRig *rig);

// Scene image size of a rig.
//
// # Safety
// `rig` must be a live handle; outputs must be writable.
enum SgStatus sg_rig_scene_size(const struct SgRig *rig, uint32_t *width, uint32_t *height);

// Pupil ellipse and glint from an 8-bit grayscale near-eye image.
// `stride` is the byte distance between rows.
//
// # Safety
// `pixels` must hold `stride * height` readable bytes.
enum SgStatus sg_detect_eye(const struct SgRig *rig,
                            const uint8_t *pixels,
                            uint32_t width,
                            uint32_t height,
                            uint32_t stride,
                            struct SgEyeObservation *out);

// Optical axis and scene gaze point from the two eye cameras' features.
//
// # Safety
// `obs` must point to two observations; `out` must be writable.
enum SgStatus sg_estimate_gaze(const struct SgRig *rig,
                               const struct SgEyeObservation *obs,
                               struct SgGaze *out);

// Maps from four row-major `width * height` arrays.
//
// # Safety
// Each array must hold `width * height` readable doubles.
enum SgStatus sg_maps_new(uint32_t width,
                          uint32_t height,
                          const double *quality,
                          const double *cos2t,
                          const double *sin2t,
                          const double *grip_width,
                          struct SgMaps **out);

// # Safety
// `maps` must come from this library and not be used afterwards.
void sg_maps_free(struct SgMaps *maps);

// Map dimensions.
//
// # Safety
// `maps` must be a live handle; outputs must be writable.
enum SgStatus sg_maps_size(const struct SgMaps *maps, uint32_t *width, uint32_t *height);

// Copies the quality map into `dst`, which holds `len` doubles.
//
// # Safety
// `dst` must hold `len` writable doubles.
enum SgStatus sg_maps_copy_quality(const struct SgMaps *maps, double *dst, size_t len);

// Gaze-weighted grasp selection. `cfg` may be NULL for defaults.
//
// # Safety
// `maps` must be a live handle; `cfg` NULL or readable; `out` writable.
enum SgStatus sg_gaze_filter(const struct SgMaps *maps,
                             struct SgPixel gaze,
                             const struct SgFusionConfig *cfg,
                             struct SgSelection *out);

// Model from a file written by `sightgrasp graspnet init` or training.
//
// # Safety
// `path` must be a nul-terminated string; `out` must be writable.
enum SgStatus sg_model_load(const char *path, struct SgModel **out);

// Freshly initialized toy-sized model (32×32 input).
enum SgStatus sg_model_new_toy(uint64_t seed, struct SgModel **out);

// # Safety
// `model` must come from this library and not be used afterwards.
void sg_model_free(struct SgModel *model);

// Side length of the square network input.
//
// # Safety
// `model` must be a live handle.
uint32_t sg_model_input_size(const struct SgModel *model);

// Grasp maps for a packed RGB8 image; the maps have the image's size.
//
// # Safety
// `rgb` must hold `width * height * 3` readable bytes.
enum SgStatus sg_model_predict(const struct SgModel *model,
                               const uint8_t *rgb,
                               uint32_t width,
                               uint32_t height,
                               struct SgMaps **out);

// Intersection over union of two rectangles; negative on invalid input.
//
// # Safety
// `a` and `b` must be readable.
double sg_jaccard(const struct SgRect *a, const struct SgRect *b);

// Whether `pred` matches any of `n` truth rectangles (angle within 30° and
// Jaccard above 0.25).
//
// # Safety
// `truths` must hold `n` readable rectangles; `out` must be writable.
enum SgStatus sg_is_success(const struct SgRect *pred,
                            const struct SgRect *truths,
                            size_t n,
                            bool *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SIGHTGRASP_H */
