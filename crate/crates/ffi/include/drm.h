#ifndef DRM_H
#define DRM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Attractor labels returned by `drm_classify_basin`.
typedef enum DrmAttractor {
  DRM_ATTRACTOR_UPPER_CYCLE = 0,
  DRM_ATTRACTOR_LOWER_CYCLE = 1,
  DRM_ATTRACTOR_FIXED_POINT0 = 2,
  DRM_ATTRACTOR_FIXED_POINT_PI = 3,
  DRM_ATTRACTOR_UNRESOLVED = 4,
} DrmAttractor;

typedef enum DrmStatus {
  DRM_STATUS_OK = 0,
  DRM_STATUS_NULL_POINTER = 1,
  DRM_STATUS_INVALID_ARGUMENT = 2,
  DRM_STATUS_CONFIG = 3,
  DRM_STATUS_NUMERICAL = 4,
  DRM_STATUS_PRECONDITION = 5,
  DRM_STATUS_BUFFER_TOO_SMALL = 6,
  DRM_STATUS_PANIC = 7,
} DrmStatus;

// Density matrix on a momentum basis.
typedef struct DrmDensity DrmDensity;

// One-period super-operator.
typedef struct DrmFloquet DrmFloquet;

// Model parameters.
typedef struct DrmModel DrmModel;

// Resonance geometry; `theta0` is meaningful only when `has_cycle` is nonzero.
typedef struct DrmGeometry {
  double i_plus;
  double i_minus;
  double delta_i_plus;
  double delta_i_minus;
  int32_t has_cycle;
  double theta0;
  double gamma_critical;
} DrmGeometry;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread; valid until the next failure.
const char *drm_last_error(void);

// Library version as a static nul-terminated string.
const char *drm_version(void);

// Validated model parameters.
//
// # Safety
// `out` must be a valid pointer to a handle slot.
enum DrmStatus drm_model_new(double g,
                             double v_plus,
                             double v_minus,
                             double omega,
                             double gamma,
                             double hbar,
                             struct DrmModel **out);

// Reads the `[model]` section of a TOML document.
//
// # Safety
// `toml` must be nul-terminated UTF-8 and `out` a valid handle slot.
enum DrmStatus drm_model_from_toml(const char *toml, struct DrmModel **out);

// Releases a model handle.
//
// # Safety
// `model` must come from `drm_model_new`/`drm_model_from_toml` or be null.
void drm_model_free(struct DrmModel *model);

// Resonance positions, widths and the upper-cycle phase.
//
// # Safety
// Pointers must be valid.
enum DrmStatus drm_model_geometry(const struct DrmModel *model, struct DrmGeometry *out);

// Finite-difference Jacobian determinant of the one-period map.
//
// # Safety
// Pointers must be valid.
enum DrmStatus drm_map_jacobian_det(const struct DrmModel *model,
                                    double theta,
                                    double action,
                                    size_t steps_per_period,
                                    double *out);

// Attractor reached from `(theta, action)` with the default basin options.
//
// # Safety
// Pointers must be valid.
enum DrmStatus drm_classify_basin(const struct DrmModel *model,
                                  double theta,
                                  double action,
                                  enum DrmAttractor *out);

// Area of the separatrix of the effective pendulum; zero when `*exists` is 0.
//
// # Safety
// Pointers must be valid.
enum DrmStatus drm_separatrix_area(const struct DrmModel *model, double *area, int32_t *exists);

// Pure state `|n><n|` on levels `n_min..=n_max`.
//
// # Safety
// `out` must be a valid handle slot.
enum DrmStatus drm_density_pure(int64_t n_min, int64_t n_max, int64_t n, struct DrmDensity **out);

// Releases a density-matrix handle.
//
// # Safety
// `rho` must come from this library or be null.
void drm_density_free(struct DrmDensity *rho);

// Number of levels (matrix side length); 0 for a null handle.
//
// # Safety
// `rho` must be valid or null.
size_t drm_density_levels(const struct DrmDensity *rho);

// Copies the diagonal, ordered from `n_min` up, into `buf[0..len]`.
//
// # Safety
// `buf` must hold `len` doubles.
enum DrmStatus drm_density_populations(const struct DrmDensity *rho, double *buf, size_t len);

// Trace of `rho` as `(re, im)`.
//
// # Safety
// Pointers must be valid.
enum DrmStatus drm_density_trace(const struct DrmDensity *rho, double *re, double *im);

// Master-equation evolution of `rho` by `periods` driving periods.
//
// # Safety
// Pointers must be valid; `out` receives a new handle.
enum DrmStatus drm_evolve(const struct DrmModel *model,
                          const struct DrmDensity *rho,
                          uint32_t periods,
                          size_t steps_per_period,
                          struct DrmDensity **out);

// Builds the one-period super-operator on levels `n_min..=n_max`.
//
// # Safety
// Pointers must be valid.
enum DrmStatus drm_floquet_new(const struct DrmModel *model,
                               int64_t n_min,
                               int64_t n_max,
                               size_t steps_per_period,
                               struct DrmFloquet **out);

// Releases a super-operator handle.
//
// # Safety
// `u` must come from `drm_floquet_new` or be null.
void drm_floquet_free(struct DrmFloquet *u);

// Number of eigenvalues, `levels^2`; 0 for a null handle.
//
// # Safety
// `u` must be valid or null.
size_t drm_floquet_dim(const struct DrmFloquet *u);

// Eigenvalues sorted by decreasing modulus into `re[0..len]`, `im[0..len]`.
//
// # Safety
// `re` and `im` must each hold `len` doubles.
enum DrmStatus drm_floquet_eigenvalues(const struct DrmFloquet *u,
                                       double *re,
                                       double *im,
                                       size_t len);

// Applies one period: `out = U rho`.
//
// # Safety
// Pointers must be valid.
enum DrmStatus drm_floquet_apply(const struct DrmFloquet *u,
                                 const struct DrmDensity *rho,
                                 struct DrmDensity **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DRM_H */
