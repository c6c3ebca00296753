#ifndef BAYESCOMP_H
#define BAYESCOMP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BcStatus {
  BC_STATUS_OK = 0,
  BC_STATUS_NULL_POINTER = 1,
  BC_STATUS_INVALID_INPUT = 2,
  BC_STATUS_NUMERIC = 3,
  BC_STATUS_UNSUPPORTED = 4,
  BC_STATUS_CONFIG = 5,
  BC_STATUS_DIVERGENCE = 6,
  BC_STATUS_DIAGNOSTIC = 7,
  BC_STATUS_IO = 8,
  BC_STATUS_PANIC = 9,
  BC_STATUS_INTERNAL = 10,
} BcStatus;

// A composed planar flow.
typedef struct BcFlow BcFlow;

// A Bayesian data model; its posterior is the sampling target.
typedef struct BcModel BcModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version, a static NUL-terminated string.
const char *bc_version(void);

// Message for the last failed call on this thread; empty after a success.
// Valid until the next `bc_*` call on the same thread.
const char *bc_last_error_message(void);

// Static name of a status code.
const char *bc_status_name(enum BcStatus status);

// Identity flow of `layers` planar layers on `R^dim`.
//
// # Safety
// `out` must be a valid pointer to a `BcFlow*`.
enum BcStatus bc_flow_new_identity(size_t dim, size_t layers, struct BcFlow **out);

// Flow with parameters drawn `N(0, scale²)` from the stream seeded by `seed`.
//
// # Safety
// `out` must be a valid pointer to a `BcFlow*`.
enum BcStatus bc_flow_new_random(size_t dim,
                                 size_t layers,
                                 double scale,
                                 uint64_t seed,
                                 struct BcFlow **out);

// Flow from a flat parameter vector of length `layers·(2·dim + 1)`.
//
// # Safety
// `params` must point to `len` readable doubles; `out` to a `BcFlow*`.
enum BcStatus bc_flow_new_from_params(size_t dim,
                                      size_t layers,
                                      const double *params,
                                      size_t len,
                                      struct BcFlow **out);

// Reads a binary flow checkpoint.
//
// # Safety
// `path` must be a NUL-terminated string; `out` a valid `BcFlow*` pointer.
enum BcStatus bc_flow_load(const char *path, struct BcFlow **out);

// Writes a binary flow checkpoint.
//
// # Safety
// `flow` must be a live handle and `path` a NUL-terminated string.
enum BcStatus bc_flow_save(const struct BcFlow *flow, const char *path);

// Releases a flow. Null is ignored.
//
// # Safety
// `flow` must come from a `bc_flow_new*`/`bc_flow_load` call and not be
// used afterwards.
void bc_flow_free(struct BcFlow *flow);

// Dimension of the flow, or 0 for a null handle.
//
// # Safety
// `flow` must be null or a live handle.
size_t bc_flow_dim(const struct BcFlow *flow);

// Number of flow parameters, or 0 for a null handle.
//
// # Safety
// `flow` must be null or a live handle.
size_t bc_flow_n_params(const struct BcFlow *flow);

// Copies the flat parameters into `out` (length `bc_flow_n_params`).
//
// # Safety
// `flow` must be a live handle; `out` must point to `len` writable doubles.
enum BcStatus bc_flow_get_params(const struct BcFlow *flow, double *out, size_t len);

// `y = T(z)` and `log|det ∂T/∂z|`.
//
// # Safety
// `z` and `y_out` must hold `dim` doubles; `logdet_out` must be writable.
enum BcStatus bc_flow_forward(const struct BcFlow *flow,
                              const double *z,
                              size_t dim,
                              double *y_out,
                              double *logdet_out);

// `z = T⁻¹(y)`.
//
// # Safety
// `y` and `z_out` must hold `dim` doubles.
enum BcStatus bc_flow_inverse(const struct BcFlow *flow,
                              const double *y,
                              size_t dim,
                              double *z_out);

// Log density of the pushforward at `y`.
//
// # Safety
// `y` must hold `dim` doubles and `out` be writable.
enum BcStatus bc_flow_log_density(const struct BcFlow *flow,
                                  const double *y,
                                  size_t dim,
                                  double *out);

// `n` draws from the flow, row-major into `out` (length `n·dim`).
//
// # Safety
// `out` must point to `len` writable doubles.
enum BcStatus bc_flow_sample(const struct BcFlow *flow,
                             size_t n,
                             uint64_t seed,
                             double *out,
                             size_t len);

// `θ ~ N(0, I)`, `y_n ~ N(θ, I)` with `n` observations of dimension `dim`,
// row-major in `obs`.
//
// # Safety
// `obs` must hold `n·dim` doubles; `out` must be a valid `BcModel*` pointer.
enum BcStatus bc_model_new_gaussian_location(const double *obs,
                                             size_t n,
                                             size_t dim,
                                             struct BcModel **out);

// Linear regression with known noise: `θ ~ N(0, prior_var I)`,
// `y_n ~ N(x_nᵀθ, noise_var)`. `x` is `n × p` row-major.
//
// # Safety
// `x` must hold `n·p` doubles, `y` `n` doubles; `out` must be valid.
enum BcStatus bc_model_new_linear_regression(const double *x,
                                             const double *y,
                                             size_t n,
                                             size_t p,
                                             double noise_var,
                                             double prior_var,
                                             struct BcModel **out);

// Logistic regression with labels in {0, 1} and prior `N(0, prior_scale² I)`.
//
// # Safety
// `x` must hold `n·p` doubles, `y` `n` doubles; `out` must be valid.
enum BcStatus bc_model_new_logistic_regression(const double *x,
                                               const double *y,
                                               size_t n,
                                               size_t p,
                                               double prior_scale,
                                               struct BcModel **out);

// Releases a model. Null is ignored.
//
// # Safety
// `model` must come from a `bc_model_new*` call and not be used afterwards.
void bc_model_free(struct BcModel *model);

// Parameter dimension, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t bc_model_dim(const struct BcModel *model);

// Number of observations, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t bc_model_n_data(const struct BcModel *model);

// Posterior potential `-log prior - log likelihood` at `theta`.
//
// # Safety
// `theta` must hold `dim` doubles and `out` be writable.
enum BcStatus bc_model_potential(const struct BcModel *model,
                                 const double *theta,
                                 size_t dim,
                                 double *out);

// Exact posterior mean (`dim`) and covariance (`dim·dim`, row-major) of a
// conjugate model; `BC_STATUS_UNSUPPORTED` otherwise.
//
// # Safety
// `mean_out` must hold `dim` doubles and `cov_out` `dim·dim` doubles.
enum BcStatus bc_model_posterior_moments(const struct BcModel *model,
                                         double *mean_out,
                                         double *cov_out,
                                         size_t dim);

// `n_steps` HMC transitions on the posterior from `init`; positions are
// written row-major into `draws_out` (length `n_steps·dim`).
//
// # Safety
// `init` must hold `dim` doubles, `draws_out` `len` doubles, and
// `accept_rate_out` must be null or writable.
enum BcStatus bc_hmc_sample(const struct BcModel *model,
                            double eps,
                            size_t n_leapfrog,
                            const double *init,
                            size_t dim,
                            size_t n_steps,
                            uint64_t seed,
                            double *draws_out,
                            size_t len,
                            double *accept_rate_out);

// Runs an experiment file. `out_dir` may be null to use the config's
// `output` entry.
//
// # Safety
// `config_path` must be a NUL-terminated string; `out_dir` null or one.
enum BcStatus bc_run_experiment(const char *config_path, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BAYESCOMP_H */
