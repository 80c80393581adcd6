#ifndef ENTROPY_HMC_H
#define ENTROPY_HMC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define EHMC_PRECOND_DIAGONAL 0

#define EHMC_PRECOND_DENSE_CHOLESKY 1

#define EHMC_PRECOND_BANDED_INVERSE 2

#define EHMC_OBJECTIVE_GSM 0

#define EHMC_OBJECTIVE_ESJD 1

#define EHMC_OBJECTIVE_L2HMC 2

#define EHMC_KERNEL_ADAPTIVE 0

#define EHMC_KERNEL_FIXED_METRIC 1

// Result code of every exported function.
typedef enum EhmcStatus {
  EHMC_STATUS_OK = 0,
  EHMC_STATUS_INVALID_ARGUMENT = 1,
  EHMC_STATUS_DIMENSION_MISMATCH = 2,
  EHMC_STATUS_MODEL_CONSTRUCTION = 3,
  EHMC_STATUS_DIVERGENCE = 4,
  EHMC_STATUS_NUMERICAL = 5,
  EHMC_STATUS_INGESTION = 6,
  EHMC_STATUS_CONFIG = 7,
  EHMC_STATUS_IO = 8,
  EHMC_STATUS_NULL_POINTER = 9,
  EHMC_STATUS_PANIC = 10,
} EhmcStatus;

// Opaque preconditioner `C`.
typedef struct EhmcPreconditioner EhmcPreconditioner;

// Opaque completed run.
typedef struct EhmcRun EhmcRun;

// Opaque target density.
typedef struct EhmcTarget EhmcTarget;

// Potential callback: returns `U(q)` for `q` of length `dim`.
typedef double (*EhmcPotentialFn)(void *user, const double *q, size_t dim);

// Gradient callback: writes `∇U(q)` into `out` (length `dim`); non-zero
// return values signal failure and are treated as a non-finite gradient.
typedef int32_t (*EhmcGradientFn)(void *user, const double *q, double *out, size_t dim);

// Sampler settings. Obtain defaults from [`ehmc_run_config_default`].
typedef struct EhmcRunConfig {
  double h;
  size_t steps;
  size_t chains;
  uint64_t adapt_steps;
  uint64_t sample_steps;
  uint64_t thin;
  uint64_t seed;
  uint32_t precond_kind;
  double init_scale;
  uint32_t objective;
  uint32_t kernel;
  // Learning rate for `θ`; non-positive selects the structure default.
  double lr_theta;
  double target_accept;
} EhmcRunConfig;

// Run summary; statistics that are not defined are NaN.
typedef struct EhmcSummary {
  double min_ess;
  double mean_ess;
  double median_ess;
  double max_rhat;
  double median_rhat;
  double acceptance_rate;
  uint64_t divergences;
  double wall_seconds;
  double cond_number;
  double step_size;
  size_t dim;
  size_t chains;
  size_t draws_per_chain;
} EhmcSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *ehmc_version(void);

// Copies the calling thread's last error message into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length excluding the NUL.
size_t ehmc_last_error_message(char *buf, size_t len);

// Gaussian `N(mean, diag(variance))`.
enum EhmcStatus ehmc_target_gaussian_diag(const double *mean,
                                          const double *variance,
                                          size_t dim,
                                          struct EhmcTarget **out);

// Gaussian `N(mean, Σ)` with `Σ` given row-major (`dim × dim`).
enum EhmcStatus ehmc_target_gaussian_dense(const double *mean,
                                           const double *covariance,
                                           size_t dim,
                                           struct EhmcTarget **out);

// Zero-mean diagonal Gaussian with variances `10^{c(i−1)/(d−1)}`.
enum EhmcStatus ehmc_target_anisotropic(size_t dim, double c, struct EhmcTarget **out);

// Target defined by user callbacks. Chains run on several threads, so both
// callbacks must be safe to call concurrently with the same `user` pointer,
// which must stay valid until the target is freed.
enum EhmcStatus ehmc_target_from_callbacks(size_t dim,
                                           void *user,
                                           EhmcPotentialFn potential,
                                           EhmcGradientFn gradient,
                                           struct EhmcTarget **out);

enum EhmcStatus ehmc_target_dim(const struct EhmcTarget *target, size_t *out);

enum EhmcStatus ehmc_target_potential(const struct EhmcTarget *target,
                                      const double *q,
                                      size_t dim,
                                      double *out);

enum EhmcStatus ehmc_target_gradient(const struct EhmcTarget *target,
                                     const double *q,
                                     size_t dim,
                                     double *out);

void ehmc_target_free(struct EhmcTarget *target);

// New preconditioner equal to `init_scale · I`.
enum EhmcStatus ehmc_precond_new(uint32_t kind,
                                 size_t dim,
                                 double init_scale,
                                 struct EhmcPreconditioner **out);

enum EhmcStatus ehmc_precond_param_len(const struct EhmcPreconditioner *p, size_t *out);

enum EhmcStatus ehmc_precond_get_theta(const struct EhmcPreconditioner *p, double *out, size_t len);

enum EhmcStatus ehmc_precond_set_theta(struct EhmcPreconditioner *p,
                                       const double *theta,
                                       size_t len);

// `out = C w`
enum EhmcStatus ehmc_precond_apply_c(const struct EhmcPreconditioner *p,
                                     const double *w,
                                     double *out,
                                     size_t dim);

// `out = Cᵀ w`
enum EhmcStatus ehmc_precond_apply_ct(const struct EhmcPreconditioner *p,
                                      const double *w,
                                      double *out,
                                      size_t dim);

// `out = C⁻¹ w`
enum EhmcStatus ehmc_precond_apply_c_inv(const struct EhmcPreconditioner *p,
                                         const double *w,
                                         double *out,
                                         size_t dim);

// `out = C⁻ᵀ w`
enum EhmcStatus ehmc_precond_apply_c_inv_t(const struct EhmcPreconditioner *p,
                                           const double *w,
                                           double *out,
                                           size_t dim);

// `log |det C|`
enum EhmcStatus ehmc_precond_logdet(const struct EhmcPreconditioner *p, double *out);

void ehmc_precond_free(struct EhmcPreconditioner *p);

// Fills `out` with the defaults: `h = 0.1`, `L = 5`, 10 chains, 1000
// adaptation and 1000 sampling steps, diagonal `C`, GSM objective.
enum EhmcStatus ehmc_run_config_default(struct EhmcRunConfig *out);

// Adapts and samples from `target`; chains start at the origin. The
// fixed-metric kernel requires a Gaussian target and uses its precision.
enum EhmcStatus ehmc_run(const struct EhmcTarget *target,
                         const struct EhmcRunConfig *config,
                         struct EhmcRun **out);

enum EhmcStatus ehmc_run_summary(const struct EhmcRun *run, struct EhmcSummary *out);

// Per-dimension ESS (`len` = dimension); undefined entries are NaN.
enum EhmcStatus ehmc_run_ess(const struct EhmcRun *run, double *out, size_t len);

// Per-dimension split-R̂ (`len` = dimension); undefined entries are NaN.
enum EhmcStatus ehmc_run_rhat(const struct EhmcRun *run, double *out, size_t len);

// Copies the draws of `chain` row-major into `out`
// (`len` = draws_per_chain · dim).
enum EhmcStatus ehmc_run_draws(const struct EhmcRun *run, size_t chain, double *out, size_t len);

// Copy of the adapted preconditioner; free with [`ehmc_precond_free`].
enum EhmcStatus ehmc_run_preconditioner(const struct EhmcRun *run, struct EhmcPreconditioner **out);

void ehmc_run_free(struct EhmcRun *run);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ENTROPY_HMC_H */
