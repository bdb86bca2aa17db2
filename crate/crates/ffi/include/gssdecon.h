#ifndef GSSDECON_H
#define GSSDECON_H

#include <stddef.h>
#include <stdint.h>

typedef enum GssStatus {
  GSS_STATUS_OK = 0,
  GSS_STATUS_NULL_POINTER = 1,
  GSS_STATUS_INVALID_ARGUMENT = 2,
  GSS_STATUS_ESTIMATION = 3,
  GSS_STATUS_CONFIG = 4,
  GSS_STATUS_OUT_OF_RANGE = 5,
  GSS_STATUS_PANIC = 6,
} GssStatus;

typedef enum GssBandwidth {
  GSS_BANDWIDTH_CV = 0,
  GSS_BANDWIDTH_MISE = 1,
  GSS_BANDWIDTH_PLUGIN = 2,
} GssBandwidth;

typedef enum GssSelection {
  GSS_SELECTION_SKEWNESS = 0,
  GSS_SELECTION_PHASE = 1,
  GSS_SELECTION_RANDOM = 2,
} GssSelection;

typedef enum GssErrorFamily {
  GSS_ERROR_FAMILY_NORMAL = 0,
  GSS_ERROR_FAMILY_LAPLACE = 1,
} GssErrorFamily;

// Opaque fitted model.
typedef struct GssFit GssFit;

// Pipeline settings. Fill with `gss_options_default` before changing
// individual fields.
typedef struct GssOptions {
  // Number of moment equations, 2 to 5.
  uint32_t moments;
  // A `GssBandwidth` value.
  uint32_t bandwidth;
  // A `GssSelection` value.
  uint32_t selection;
  double kappa;
  // Phase window; zero or negative picks it from the data.
  double t_star;
  // Seed for random selection.
  uint64_t seed;
} GssOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Writes the library defaults into `out`.
//
// # Safety
// `out` must be null or point to writable memory for one `GssOptions`.
enum GssStatus gss_options_default(struct GssOptions *out);

// Fits the deconvolution estimator to `n` contaminated observations.
// `family` is a `GssErrorFamily` value and `options` may be null for
// defaults. On success `*out` owns a new fit.
//
// # Safety
// `w` must point to `n` readable doubles, `options` must be null or valid,
// and `out` must point to writable storage for one pointer.
enum GssStatus gss_deconvolve(const double *w,
                              size_t n,
                              uint32_t family,
                              double error_variance,
                              const struct GssOptions *options,
                              struct GssFit **out);

// Releases a fit. Null is ignored.
//
// # Safety
// `fit` must be null or a pointer from `gss_deconvolve` not yet freed.
void gss_fit_free(struct GssFit *fit);

// Location, scale and bandwidth of the selected fit.
//
// # Safety
// `fit` must be a live handle; each output pointer may be null.
enum GssStatus gss_fit_params(const struct GssFit *fit, double *xi, double *omega, double *h);

// Number of candidate solutions considered by the selection step.
//
// # Safety
// `fit` must be a live handle and `count` writable.
enum GssStatus gss_fit_candidate_count(const struct GssFit *fit, size_t *count);

// Index of the selected candidate.
//
// # Safety
// `fit` must be a live handle and `index` writable.
enum GssStatus gss_fit_selected(const struct GssFit *fit, size_t *index);

// Parameters of candidate `i`: GMM location, scale and objective, the
// bandwidth used, and the selection score (lower is preferred).
//
// # Safety
// `fit` must be a live handle; each output pointer may be null.
enum GssStatus gss_fit_candidate(const struct GssFit *fit,
                                 size_t i,
                                 double *xi,
                                 double *omega,
                                 double *d,
                                 double *h,
                                 double *score);

// Evaluates the fitted density of X at `m` points.
//
// # Safety
// `x` must point to `m` readable doubles and `out` to `m` writable ones.
enum GssStatus gss_fit_density(const struct GssFit *fit, const double *x, size_t m, double *out);

// Evaluates the fitted skewing function, in [0, 1], at `m` standardized points.
//
// # Safety
// `z` must point to `m` readable doubles and `out` to `m` writable ones.
enum GssStatus gss_fit_skew(const struct GssFit *fit, const double *z, size_t m, double *out);

// Message for the last failed call on this thread, or null. The pointer
// stays valid until the next library call on the same thread.
const char *gss_last_error(void);

// Static, NUL-terminated library version.
const char *gss_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GSSDECON_H */
