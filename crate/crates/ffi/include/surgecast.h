#ifndef SURGECAST_H
#define SURGECAST_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum SurgecastStatus {
  SURGECAST_STATUS_OK = 0,
  SURGECAST_STATUS_NULL_POINTER = 1,
  SURGECAST_STATUS_INVALID_ARGUMENT = 2,
  SURGECAST_STATUS_IO = 3,
  SURGECAST_STATUS_FORMAT = 4,
  SURGECAST_STATUS_SHAPE = 5,
  SURGECAST_STATUS_NON_FINITE = 6,
  SURGECAST_STATUS_PANIC = 7,
} SurgecastStatus;

/**
 * Triangular mesh.
 */
typedef struct SurgecastMesh SurgecastMesh;

/**
 * Trained forecaster loaded from a checkpoint.
 */
typedef struct SurgecastModel SurgecastModel;

/**
 * Pixel-to-triangle lookup for one mesh and grid.
 */
typedef struct SurgecastRasterIndex SurgecastRasterIndex;

/**
 * Per-frame scores. `r2` is meaningful only when `r2_defined` is nonzero.
 */
typedef struct SurgecastScores {
  double mse;
  double mae;
  double rmse;
  double r2;
  uint8_t r2_defined;
} SurgecastScores;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread; empty after a
 * successful call. Valid until the next call on the same thread.
 */
const char *surgecast_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *surgecast_version(void);

/**
 * Scales `value` into [0, 1] over `[lo, hi]`, clamping outside.
 *
 * # Safety
 * `out` must be a valid pointer to one `double`.
 */
enum SurgecastStatus surgecast_clamp_scale(double value, double lo, double hi, double *out);

/**
 * Encodes a normalized elevation `u` in [0, 1] as RGB with the built-in
 * colormap.
 *
 * # Safety
 * `rgb_out` must point to 3 writable doubles.
 */
enum SurgecastStatus surgecast_rgb_encode(double u, double *rgb_out);

/**
 * Inverse of [`surgecast_rgb_encode`]: nearest colormap position for an
 * RGB triple.
 *
 * # Safety
 * `rgb` must point to 3 doubles and `u_out` to one writable double.
 */
enum SurgecastStatus surgecast_rgb_decode(const double *rgb, double *u_out);

/**
 * Reads an ASCII grid file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` a valid pointer.
 */
enum SurgecastStatus surgecast_mesh_load(const char *path, struct SurgecastMesh **out);

/**
 * Builds a mesh from node arrays (`n_nodes` each) and `3 * n_triangles`
 * zero-based node indices.
 *
 * # Safety
 * All arrays must hold the stated number of elements; `out` a valid pointer.
 */
enum SurgecastStatus surgecast_mesh_new(size_t n_nodes,
                                        const double *lon,
                                        const double *lat,
                                        const double *depth,
                                        size_t n_triangles,
                                        const uint32_t *triangles,
                                        struct SurgecastMesh **out);

/**
 * # Safety
 * `mesh` must be null or a handle from this library, not yet freed.
 */
void surgecast_mesh_free(struct SurgecastMesh *mesh);

/**
 * Number of nodes, or 0 for a null handle.
 *
 * # Safety
 * `mesh` must be null or a live handle.
 */
size_t surgecast_mesh_node_count(const struct SurgecastMesh *mesh);

/**
 * Precomputes the covering triangle and weights of every pixel center of a
 * `width x height` grid over the given bounds.
 *
 * # Safety
 * `mesh` must be a live handle; `out` a valid pointer.
 */
enum SurgecastStatus surgecast_raster_index_build(const struct SurgecastMesh *mesh,
                                                  double lon_min,
                                                  double lon_max,
                                                  double lat_min,
                                                  double lat_max,
                                                  size_t width,
                                                  size_t height,
                                                  struct SurgecastRasterIndex **out);

/**
 * # Safety
 * `index` must be null or a live handle.
 */
void surgecast_raster_index_free(struct SurgecastRasterIndex *index);

/**
 * Interpolates `n_values` nodal values onto the index's grid. Writes
 * `n_pixels` values and mask bytes (1 = covered and wet); uncovered or dry
 * pixels get `background`. Nodes equal to `fill_value` are dry.
 *
 * # Safety
 * Arrays must hold the stated counts; `index` must be a live handle.
 */
enum SurgecastStatus surgecast_rasterize(const struct SurgecastRasterIndex *index,
                                         const double *values,
                                         size_t n_values,
                                         double fill_value,
                                         double background,
                                         double *values_out,
                                         uint8_t *mask_out,
                                         size_t n_pixels);

/**
 * Loads a trained model checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` a valid pointer.
 */
enum SurgecastStatus surgecast_model_load(const char *path, struct SurgecastModel **out);

/**
 * # Safety
 * `model` must be null or a live handle.
 */
void surgecast_model_free(struct SurgecastModel *model);

/**
 * Number of context frames a forecast consumes.
 */
size_t surgecast_context_len(void);

/**
 * Number of frames a forecast produces.
 */
size_t surgecast_horizon(void);

/**
 * Autoregressive forecast of one clip.
 *
 * * `context`: `context_len` frames of 6 channels x H x W in [0, 1]
 *   (zeta RGB, windx, windy, depth).
 * * `future_wind`: `horizon` frames of 2 channels x H x W.
 * * `bathymetry`: H x W.
 * * `rgb_out`: receives `horizon` frames of 3 channels x H x W.
 *
 * # Safety
 * Arrays must hold the stated counts; `model` must be a live handle.
 */
enum SurgecastStatus surgecast_forecast(const struct SurgecastModel *model,
                                        const float *context,
                                        const float *future_wind,
                                        const float *bathymetry,
                                        size_t height,
                                        size_t width,
                                        float *rgb_out);

/**
 * MSE, MAE, RMSE and R² of one predicted frame against the truth over all
 * `n` values.
 *
 * # Safety
 * `pred` and `truth` must hold `n` floats; `out` a valid pointer.
 */
enum SurgecastStatus surgecast_frame_metrics(const float *pred,
                                             const float *truth,
                                             size_t n,
                                             struct SurgecastScores *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SURGECAST_H */
