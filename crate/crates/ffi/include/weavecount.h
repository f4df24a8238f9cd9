#ifndef WEAVECOUNT_H
#define WEAVECOUNT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

// Result code of every fallible call.
typedef enum WcStatus {
  WC_STATUS_OK = 0,
  WC_STATUS_NULL_POINTER = 1,
  WC_STATUS_INVALID_UTF8 = 2,
  WC_STATUS_IO = 3,
  WC_STATUS_DECODE = 4,
  WC_STATUS_MULTI_CHANNEL = 5,
  WC_STATUS_MISSING_PPC = 6,
  WC_STATUS_INVALID_PARAM = 7,
  WC_STATUS_OUT_OF_BOUNDS = 8,
  WC_STATUS_SHAPE_MISMATCH = 9,
  WC_STATUS_NO_DYNAMIC_RANGE = 10,
  WC_STATUS_NO_DOMINANT_FREQUENCY = 11,
  WC_STATUS_TOO_FEW_POINTS = 12,
  WC_STATUS_EMPTY = 13,
  WC_STATUS_UNASSIGNED = 14,
  WC_STATUS_FORMAT = 15,
  WC_STATUS_PANIC = 16,
} WcStatus;

typedef enum WcThresholdRule {
  WC_THRESHOLD_RULE_FIXED = 0,
  WC_THRESHOLD_RULE_OTSU = 1,
} WcThresholdRule;

typedef enum WcMethod {
  WC_METHOD_DLSC = 0,
  WC_METHOD_DLFA = 1,
  WC_METHOD_FT = 2,
} WcMethod;

// Crossing centroids in pixel coordinates.
typedef struct WcCentroids WcCentroids;

// Grid of per-patch values from a canvas sweep.
typedef struct WcDensityMap WcDensityMap;

// Grayscale image with its resolution.
typedef struct WcImage WcImage;

// Trained segmentation network.
typedef struct WcNetwork WcNetwork;

typedef struct WcPreprocessParams {
  // Local window side in pixels, odd.
  size_t window;
  double epsilon;
  double gamma;
  size_t bins;
} WcPreprocessParams;

typedef struct WcScParams {
  size_t m;
  double alpha_deg;
  double q;
} WcScParams;

// Spatial count result; absent directions are NaN.
typedef struct WcDensity {
  // Crossings per cm walking along x.
  double h_density;
  // Crossings per cm walking along y.
  double v_density;
  double h_angle_dev;
  double v_angle_dev;
  size_t n_h;
  size_t n_v;
} WcDensity;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *wc_version(void);

// Copies the last error message of this thread into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length excluding the NUL.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t wc_last_error(char *buf, size_t len);

struct WcPreprocessParams wc_preprocess_defaults(void);

struct WcScParams wc_sc_defaults(void);

// Loads a PGM or PNG. A `ppc` <= 0 reads the resolution from the sidecar.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum WcStatus wc_image_load(const char *path, double ppc, struct WcImage **out);

// Image from `width * height` row-major samples.
//
// # Safety
// `data` must point to `width * height` doubles; `out` must be writable.
enum WcStatus wc_image_new(size_t width,
                           size_t height,
                           double ppc,
                           const double *data,
                           struct WcImage **out);

// # Safety
// `img` must be a live handle or null.
size_t wc_image_width(const struct WcImage *img);

// # Safety
// `img` must be a live handle or null.
size_t wc_image_height(const struct WcImage *img);

// # Safety
// `img` must be a live handle or null.
double wc_image_ppc(const struct WcImage *img);

// Copies up to `len` samples into `buf`; returns the number of samples in the image.
//
// # Safety
// `img` must be a live handle; `buf` null or `len` writable doubles.
size_t wc_image_copy(const struct WcImage *img, double *buf, size_t len);

// # Safety
// `img` must come from this library and not be used afterwards.
void wc_image_free(struct WcImage *img);

// # Safety
// `img` and `params` must be valid; `out` writable.
enum WcStatus wc_preprocess(const struct WcImage *img,
                            const struct WcPreprocessParams *params,
                            struct WcImage **out);

// # Safety
// `path` must be a NUL-terminated string; `out` writable.
enum WcStatus wc_network_load(const char *path, struct WcNetwork **out);

// # Safety
// `net` must come from this library and not be used afterwards.
void wc_network_free(struct WcNetwork *net);

// Crossing probability map of a preprocessed image.
//
// # Safety
// `net` and `img` must be live handles; `out` writable.
enum WcStatus wc_network_predict(const struct WcNetwork *net,
                                 const struct WcImage *img,
                                 struct WcImage **out);

// Thresholds a probability map and returns component centroids.
//
// # Safety
// `prob` must be a live handle; `out` writable.
enum WcStatus wc_extract_centroids(const struct WcImage *prob,
                                   enum WcThresholdRule rule,
                                   size_t min_area,
                                   struct WcCentroids **out);

// Centroid set from `n` coordinate pairs.
//
// # Safety
// `xs` and `ys` must point to `n` doubles each; `out` writable.
enum WcStatus wc_centroids_new(const double *xs,
                               const double *ys,
                               size_t n,
                               size_t width,
                               size_t height,
                               double ppc,
                               struct WcCentroids **out);

// # Safety
// `c` must be a live handle or null.
size_t wc_centroids_len(const struct WcCentroids *c);

// Copies centroid `i` into `x`, `y`.
//
// # Safety
// `c` must be a live handle; `x` and `y` writable.
enum WcStatus wc_centroids_get(const struct WcCentroids *c, size_t i, double *x, double *y);

// # Safety
// `c` must come from this library and not be used afterwards.
void wc_centroids_free(struct WcCentroids *c);

// Nearest-neighbor thread count of a centroid set at the set's resolution.
//
// # Safety
// `c` and `params` must be valid; `out` writable.
enum WcStatus wc_spatial_count(const struct WcCentroids *c,
                               const struct WcScParams *params,
                               struct WcDensity *out);

// Fourier thread count of a square patch with default settings.
//
// # Safety
// `img` must be a live handle; `h` and `v` writable.
enum WcStatus wc_ft_density(const struct WcImage *img, double *h, double *v);

// Sweeps a preprocessed canvas with 200 px patches every `shift` pixels.
// `net` may be null for `WcMethod::Ft`.
//
// # Safety
// `canvas` must be a live handle, `net` a live handle or null; `out_h`, `out_v` writable.
enum WcStatus wc_sweep(const struct WcImage *canvas,
                       enum WcMethod method,
                       size_t shift,
                       const struct WcNetwork *net,
                       struct WcDensityMap **out_h,
                       struct WcDensityMap **out_v);

// # Safety
// `map` must be a live handle or null.
size_t wc_map_rows(const struct WcDensityMap *map);

// # Safety
// `map` must be a live handle or null.
size_t wc_map_cols(const struct WcDensityMap *map);

// Cell value, NaN when missing or out of range.
//
// # Safety
// `map` must be a live handle or null.
double wc_map_get(const struct WcDensityMap *map, size_t row, size_t col);

// # Safety
// `map` must come from this library and not be used afterwards.
void wc_map_free(struct WcDensityMap *map);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WEAVECOUNT_H */
