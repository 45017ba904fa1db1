#ifndef GVOF_H
#define GVOF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GvofStatus {
  GVOF_STATUS_OK = 0,
  GVOF_STATUS_NULL_POINTER = 1,
  GVOF_STATUS_INVALID_ARGUMENT = 2,
  GVOF_STATUS_DIMENSION_MISMATCH = 3,
  GVOF_STATUS_EMPTY_REGION = 4,
  GVOF_STATUS_NUMERIC = 5,
  GVOF_STATUS_IO = 6,
  GVOF_STATUS_FORMAT = 7,
  GVOF_STATUS_PANIC = 8,
} GvofStatus;

/*
 Opaque volume handle.
 */
typedef struct GvofVolume GvofVolume;

typedef struct GvofGaussianParams {
  double fwhm;
} GvofGaussianParams;

typedef struct GvofBilateralParams {
  double spatial_fwhm;
  double intensity_width;
  size_t radius;
} GvofBilateralParams;

typedef struct GvofNdfParams {
  double kappa;
  size_t iterations;
  double dt;
  double smooth_fwhm;
} GvofNdfParams;

typedef struct GvofGvofParams {
  double kappa;
  size_t iterations;
  double smooth_fwhm;
  size_t window_x;
  size_t window_y;
  double dt;
  /*
   Relative L1 change that stops iteration early; `<= 0` disables it.
   */
  double convergence_tol;
} GvofGvofParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread, or null. The pointer
 stays valid until the next failing call on the same thread.
 */
const char *gvof_last_error_message(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *gvof_version(void);

/*
 Creates a volume of `nx * ny * nz` voxels, x fastest. `data` may be null
 for an all-zero volume; otherwise it must hold `nx * ny * nz` values.

 # Safety
 `data` must be null or valid for the stated length; `out` must be valid.
 */
enum GvofStatus gvof_volume_new(size_t nx,
                                size_t ny,
                                size_t nz,
                                double sx,
                                double sy,
                                double sz,
                                const double *data,
                                struct GvofVolume **out);

/*
 Releases a volume. Null is ignored.

 # Safety
 `vol` must come from this library and not be used afterwards.
 */
void gvof_volume_free(struct GvofVolume *vol);

/*
 Writes dims and spacing into 3-element arrays; either may be null.

 # Safety
 Non-null pointers must be valid for three elements.
 */
enum GvofStatus gvof_volume_dims(const struct GvofVolume *vol, size_t *dims, double *spacing);

/*
 Copies the voxel values into `out`, which must hold exactly `len` values.

 # Safety
 `out` must be valid for `len` writes.
 */
enum GvofStatus gvof_volume_copy_data(const struct GvofVolume *vol, double *out, size_t len);

/*
 Reads a volume from its header path.

 # Safety
 `path` must be a NUL-terminated string; `out` must be valid.
 */
enum GvofStatus gvof_volume_read(const char *path, struct GvofVolume **out);

/*
 Writes a volume (header plus `.raw` payload).

 # Safety
 `path` must be a NUL-terminated string.
 */
enum GvofStatus gvof_volume_write(const struct GvofVolume *vol, const char *path);

struct GvofGaussianParams gvof_gaussian_params_default(void);

struct GvofBilateralParams gvof_bilateral_params_default(void);

struct GvofNdfParams gvof_ndf_params_default(void);

struct GvofGvofParams gvof_gvof_params_default(void);

/*
 Slice-wise 2D Gaussian smoothing.

 # Safety
 Pointers must be valid; `out` receives a new handle on success.
 */
enum GvofStatus gvof_filter_gaussian(const struct GvofVolume *vol,
                                     const struct GvofGaussianParams *params,
                                     struct GvofVolume **out);

/*
 Slice-wise bilateral filter.

 # Safety
 Pointers must be valid; `out` receives a new handle on success.
 */
enum GvofStatus gvof_filter_bilateral(const struct GvofVolume *vol,
                                      const struct GvofBilateralParams *params,
                                      struct GvofVolume **out);

/*
 Perona-Malik diffusion with a frozen diffusivity.

 # Safety
 Pointers must be valid; `out` receives a new handle on success.
 */
enum GvofStatus gvof_filter_ndf(const struct GvofVolume *vol,
                                const struct GvofNdfParams *params,
                                struct GvofVolume **out);

/*
 Orientation-coherence diffusion.

 # Safety
 Pointers must be valid; `out` receives a new handle on success.
 */
enum GvofStatus gvof_filter_gvof(const struct GvofVolume *vol,
                                 const struct GvofGvofParams *params,
                                 struct GvofVolume **out);

/*
 Background SNR in dB over a spherical ROI (center in mm, diameter in mm).

 # Safety
 `center` must point to three values; `out` must be valid.
 */
enum GvofStatus gvof_snr_db(const struct GvofVolume *vol,
                            const double *center,
                            double diameter,
                            double *out);

/*
 CNR of a sphere against a spherical background ROI. The sphere mask is
 eroded in-plane with a 3x3 element first.

 # Safety
 Center pointers must point to three values; `out` must be valid.
 */
enum GvofStatus gvof_cnr(const struct GvofVolume *vol,
                         const double *sphere_center,
                         double sphere_diameter,
                         const double *bg_center,
                         double bg_diameter,
                         double *out);

/*
 Maximum inside a sphere mask dilated by one voxel.

 # Safety
 `center` must point to three values; `out` must be valid.
 */
enum GvofStatus gvof_ac_max(const struct GvofVolume *vol,
                            const double *center,
                            double diameter,
                            double *out);

/*
 Edge resolution (FWHM, mm) from the rising x edge of a sphere.

 # Safety
 `center` must point to three values; `out` must be valid.
 */
enum GvofStatus gvof_resolution_fwhm(const struct GvofVolume *vol,
                                     const double *center,
                                     double diameter,
                                     double *out);

double gvof_percent_bias(double ac_max_mean, double tac);

double gvof_percent_difference(double high, double low);

/*
 One noisy acquisition of the default phantom layout.

 `contrast` is `"2:1"` or `"4:1"`; `sensitivity <= 0` selects the
 calibrated default.

 # Safety
 `contrast` must be a NUL-terminated string; `out` must be valid.
 */
enum GvofStatus gvof_phantom_simulate(const char *contrast,
                                      double duration_s,
                                      double sensitivity,
                                      uint64_t seed,
                                      struct GvofVolume **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GVOF_H */
