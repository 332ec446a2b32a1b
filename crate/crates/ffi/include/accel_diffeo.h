#ifndef ACCEL_DIFFEO_H
#define ACCEL_DIFFEO_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AdScheme {
  AD_SCHEME_AGD = 0,
  AD_SCHEME_AGD_NODISSIP = 1,
  AD_SCHEME_EPDIFF = 2,
  AD_SCHEME_GD = 3,
  AD_SCHEME_WAVE = 4,
} AdScheme;

/**
 * Result code of every fallible call.
 */
typedef enum AdStatus {
  AD_STATUS_OK = 0,
  AD_STATUS_NULL_POINTER = 1,
  AD_STATUS_INVALID_ARGUMENT = 2,
  AD_STATUS_IO = 3,
  AD_STATUS_FORMAT = 4,
  /**
   * The solver aborted after a failed step.
   */
  AD_STATUS_NUMERICAL = 5,
  AD_STATUS_PANIC = 6,
} AdStatus;

/**
 * Grayscale image with intensities in `[0, 1]`.
 */
typedef struct AdImage AdImage;

/**
 * Outcome of a registration run.
 */
typedef struct AdRegistration AdRegistration;

/**
 * Solver settings. Fill with [`ad_config_default`] and adjust.
 */
typedef struct AdConfig {
  enum AdScheme scheme;
  double alpha;
  uint32_t p;
  double c;
  double safety;
  double tol;
  uint64_t max_iters;
  double eps_visc;
} AdConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *ad_last_error(void);

/**
 * Create an image from `width * height` row-major samples.
 *
 * # Safety
 * `data` must point to `width * height` readable doubles and `out` must be
 * writable.
 */
enum AdStatus ad_image_new(uint32_t width,
                           uint32_t height,
                           const double *data,
                           struct AdImage **out);

/**
 * Load a P2 or P5 PGM file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum AdStatus ad_image_load_pgm(const char *path, struct AdImage **out);

/**
 * # Safety
 * `image` must be null or a handle from this library not yet freed.
 */
void ad_image_free(struct AdImage *image);

/**
 * Width and height of an image.
 *
 * # Safety
 * `image` must be a live handle; `width` and `height` writable.
 */
enum AdStatus ad_image_size(const struct AdImage *image, uint32_t *width, uint32_t *height);

/**
 * Default settings for a scheme and regularity weight.
 *
 * # Safety
 * `out` must be writable.
 */
enum AdStatus ad_config_default(enum AdScheme scheme, double alpha, struct AdConfig *out);

/**
 * Register `i1` onto `i0`.
 *
 * A run that stops at the iteration cap still succeeds; query
 * [`ad_registration_converged`]. A numerical abort returns
 * `AD_STATUS_NUMERICAL` and no handle.
 *
 * # Safety
 * All pointers must be valid; `out` writable.
 */
enum AdStatus ad_register(const struct AdImage *i0,
                          const struct AdImage *i1,
                          const struct AdConfig *config,
                          struct AdRegistration **out);

/**
 * # Safety
 * `reg` must be null or a handle from this library not yet freed.
 */
void ad_registration_free(struct AdRegistration *reg);

/**
 * Steps taken; 0 for a null handle.
 *
 * # Safety
 * `reg` must be null or a live handle.
 */
uint64_t ad_registration_iterations(const struct AdRegistration *reg);

/**
 * 1 if the run met the convergence test, else 0.
 *
 * # Safety
 * `reg` must be null or a live handle.
 */
int32_t ad_registration_converged(const struct AdRegistration *reg);

/**
 * Final potential energy; NaN for a null handle.
 *
 * # Safety
 * `reg` must be null or a live handle.
 */
double ad_registration_potential(const struct AdRegistration *reg);

/**
 * Copy the displacement of the final map into two arrays of `len` doubles.
 *
 * # Safety
 * `ux` and `uy` must each point to `len` writable doubles.
 */
enum AdStatus ad_registration_displacement(const struct AdRegistration *reg,
                                           double *ux,
                                           double *uy,
                                           size_t len);

/**
 * Write the final map as a DFLO flow file.
 *
 * # Safety
 * `reg` must be a live handle and `path` a NUL-terminated string.
 */
enum AdStatus ad_registration_save_flow(const struct AdRegistration *reg, const char *path);

/**
 * Write `I₁` warped by the final map as a binary PGM.
 *
 * # Safety
 * `reg` must be a live handle and `path` a NUL-terminated string.
 */
enum AdStatus ad_registration_save_warped(const struct AdRegistration *reg, const char *path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ACCEL_DIFFEO_H */
