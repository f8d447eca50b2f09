/* driveflow C API — generated by cbindgen, do not edit. */

#ifndef DRIVEFLOW_H
#define DRIVEFLOW_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Call outcome. Mirrors the CLI exit codes.
 */
typedef enum DfStatus {
  DF_STATUS_OK = 0,
  /**
   * Invalid arguments (null pointers, bad UTF-8, wrong model kind).
   */
  DF_STATUS_USAGE = 1,
  /**
   * Unreadable or malformed files, shape mismatches.
   */
  DF_STATUS_DATA = 2,
  /**
   * Non-finite values or other numeric failures.
   */
  DF_STATUS_NUMERIC = 3,
} DfStatus;

/**
 * Model family of a loaded checkpoint.
 */
typedef enum DfModelKind {
  DF_MODEL_KIND_IO = 0,
  DF_MODEL_KIND_PCM = 1,
  DF_MODEL_KIND_PN = 2,
} DfModelKind;

/**
 * Opaque handle to a loaded model.
 */
typedef struct DfModel DfModel;

/**
 * One prediction in every unit a caller might want.
 */
typedef struct DfPrediction {
  double angle_rad;
  double angle_deg;
  double speed_norm;
  double speed_kmh;
} DfPrediction;

/**
 * Spherical projection parameters for `df_project_cloud_file`. Pass NULL
 * to use the defaults (90°×26.8°, 64×512, 120 m).
 */
typedef struct DfProjection {
  double h_fov_deg;
  double v_fov_deg;
  uint32_t height;
  uint32_t width;
  double max_range_m;
} DfProjection;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static string; do not free.
 */
const char *df_version(void);

/**
 * Message for the most recent failure on this thread, or NULL if none.
 * The caller owns the returned string and must release it with
 * `df_string_free`.
 */
char *df_last_error_message(void);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must be a pointer previously returned by `df_last_error_message`
 * (or NULL) that has not been freed yet.
 */
void df_string_free(char *s);

/**
 * Loads a checkpoint file into a model handle. On success writes the
 * handle into `out`; release it with `df_model_free`.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string; `out` must be a valid
 * pointer to writable memory.
 */
enum DfStatus df_model_load(const char *path, struct DfModel **out);

/**
 * Releases a model handle.
 *
 * # Safety
 * `model` must be a pointer previously returned by `df_model_load` (or
 * NULL) that has not been freed yet.
 */
void df_model_free(struct DfModel *model);

/**
 * Model family of a loaded handle.
 *
 * # Safety
 * `model` must be a live handle from `df_model_load`.
 */
enum DfModelKind df_model_kind(const struct DfModel *model);

/**
 * Runs one prediction from files: a binary PPM image and, for pcm/pn
 * models, a cloud file (ASCII or PCB1 binary; pass NULL for io models).
 * The image is bilinearly resized to the model's input size when it
 * differs. `seed` drives the pn branch's deterministic cloud
 * downsampling.
 *
 * # Safety
 * Paths must be valid NUL-terminated strings (cloud_path may be NULL);
 * `out` must point to writable memory for one `DfPrediction`.
 */
enum DfStatus df_predict_files(const struct DfModel *model,
                               const char *image_path,
                               const char *cloud_path,
                               uint64_t seed,
                               struct DfPrediction *out);

/**
 * Runs one prediction from memory. `image` is channel-major C×H×W f64
 * data; `points` is an optional array of `num_points` xyz triples in
 * meters.
 *
 * # Safety
 * `image` must point to `channels*height*width` f64 values; `points`,
 * when non-NULL, to `num_points*3` f64 values; `out` to one
 * `DfPrediction`.
 */
enum DfStatus df_predict_raw(const struct DfModel *model,
                             const double *image,
                             uintptr_t channels,
                             uintptr_t height,
                             uintptr_t width,
                             const double *points,
                             uintptr_t num_points,
                             uint64_t seed,
                             struct DfPrediction *out);

/**
 * Projects a cloud file to a 16-bit depth-map PGM. Pass NULL for `cfg`
 * to use the default projection.
 *
 * # Safety
 * Paths must be valid NUL-terminated strings; `cfg` may be NULL or point
 * to one `DfProjection`.
 */
enum DfStatus df_project_cloud_file(const char *cloud_path,
                                    const struct DfProjection *cfg,
                                    const char *out_pgm_path);

/**
 * Generates a synthetic dataset under `out_dir`, honoring an optional
 * config file (same format as the CLI's `--config`).
 *
 * # Safety
 * `out_dir` must be a valid NUL-terminated string; `config_path` may be
 * NULL.
 */
enum DfStatus df_generate_dataset(const char *config_path, const char *out_dir, uint64_t seed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DRIVEFLOW_H */
