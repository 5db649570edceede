#ifndef LOBPCG_H
#define LOBPCG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of fallible calls.
 */
typedef enum LobpcgError {
  LOBPCG_ERROR_OK = 0,
  LOBPCG_ERROR_NULL_POINTER = 1,
  LOBPCG_ERROR_INVALID_ARGUMENT = 2,
  LOBPCG_ERROR_DIMENSION_MISMATCH = 3,
  /**
   * Cholesky breakdown, non-finite values and similar numerical failures.
   */
  LOBPCG_ERROR_NUMERICAL = 4,
  /**
   * A user callback returned a non-zero code.
   */
  LOBPCG_ERROR_CALLBACK = 5,
  LOBPCG_ERROR_BUFFER_TOO_SMALL = 6,
  LOBPCG_ERROR_PANIC = 7,
} LobpcgError;

/**
 * Final state of a solve, see [`lobpcg_report_status`].
 */
typedef enum LobpcgStatus {
  LOBPCG_STATUS_CONVERGED = 0,
  LOBPCG_STATUS_MAX_ITER_REACHED = 1,
  /**
   * Converged after at least one basis fallback.
   */
  LOBPCG_STATUS_BASIS_FALLBACK = 2,
  LOBPCG_STATUS_FAILED = 3,
} LobpcgStatus;

typedef struct LobpcgOperator LobpcgOperator;

typedef struct LobpcgPreconditioner LobpcgPreconditioner;

typedef struct LobpcgReport LobpcgReport;

/**
 * `y = op(x)` for an `n × k` column-major block. Return 0 on success.
 */
typedef int (*LobpcgApplyFn)(void *user, const double *x, double *y, size_t n, size_t k);

typedef struct LobpcgConfig {
  size_t block_size;
  double tol;
  size_t max_iter;
  uint64_t seed;
  /**
   * 0 silent, 1 summary on stderr, 2 per-iteration log.
   */
  uint32_t verbosity;
  /**
   * Non-zero compares residuals against `tol * ||A x||`.
   */
  int relative_tol;
  /**
   * Non-zero records orthonormality errors every iteration.
   */
  int track_invariants;
} LobpcgConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or `NULL`. The pointer stays
 * valid until the next call into this library from the same thread.
 */
const char *lobpcg_last_error_message(void);

const char *lobpcg_version(void);

/**
 * 7-point Laplacian with Dirichlet boundaries on an `nx × ny × nz` grid.
 */
struct LobpcgOperator *lobpcg_operator_laplacian3d(size_t nx, size_t ny, size_t nz);

/**
 * # Safety
 * `diag` must point to `n` readable doubles.
 */
struct LobpcgOperator *lobpcg_operator_diagonal(const double *diag, size_t n);

/**
 * Symmetric `n × n` matrix, column-major.
 *
 * # Safety
 * `values` must point to `n * n` readable doubles.
 */
struct LobpcgOperator *lobpcg_operator_dense(const double *values, size_t n);

/**
 * Operator applied through `apply`; `user` is passed back unchanged.
 *
 * # Safety
 * `apply` must be safe to call with `user` for as long as the handle and
 * anything built from it are alive.
 */
struct LobpcgOperator *lobpcg_operator_callback(size_t n, LobpcgApplyFn apply, void *user);

/**
 * `A + alpha * B`, or `A + alpha * I` when `b` is `NULL`. The operands are
 * shared, so they may be freed independently of the result.
 *
 * # Safety
 * `a` must be a live handle; `b` a live handle or `NULL`.
 */
struct LobpcgOperator *lobpcg_operator_shift(const struct LobpcgOperator *a,
                                             const struct LobpcgOperator *b,
                                             double alpha);

/**
 * Dimension of `op`, 0 for `NULL`.
 *
 * # Safety
 * `op` must be a live handle or `NULL`.
 */
size_t lobpcg_operator_dim(const struct LobpcgOperator *op);

/**
 * Applies `op` to an `n × k` block.
 *
 * # Safety
 * `x` and `y` must each hold `dim * k` doubles.
 */
enum LobpcgError lobpcg_operator_apply(const struct LobpcgOperator *op,
                                       const double *x,
                                       double *y,
                                       size_t k);

/**
 * # Safety
 * `op` must be a handle from this library or `NULL`, and not used afterwards.
 */
void lobpcg_operator_free(struct LobpcgOperator *op);

/**
 * `T = diag(A)^-1`; needs an operator that knows its diagonal.
 *
 * # Safety
 * `a` must be a live handle.
 */
struct LobpcgPreconditioner *lobpcg_preconditioner_jacobi(const struct LobpcgOperator *a);

/**
 * `steps` iterations of PCG on `A y = r` from a zero guess, preconditioned
 * by `inner` (identity when `NULL`).
 *
 * # Safety
 * `a` must be a live handle; `inner` a live handle or `NULL`.
 */
struct LobpcgPreconditioner *lobpcg_preconditioner_inner_pcg(const struct LobpcgOperator *a,
                                                             const struct LobpcgPreconditioner *inner,
                                                             size_t steps);

/**
 * # Safety
 * As for [`lobpcg_operator_callback`].
 */
struct LobpcgPreconditioner *lobpcg_preconditioner_callback(size_t n,
                                                            LobpcgApplyFn apply,
                                                            void *user);

/**
 * # Safety
 * `t` must be a handle from this library or `NULL`, and not used afterwards.
 */
void lobpcg_preconditioner_free(struct LobpcgPreconditioner *t);

struct LobpcgConfig lobpcg_config_default(void);

/**
 * Smallest `cfg.block_size` eigenpairs of `A x = λ B x`.
 *
 * `b = NULL` means `B = I`, `t = NULL` no preconditioning, `x0 = NULL` a
 * seeded random start (otherwise `dim * block_size` doubles). On success
 * `*out` receives a report even if the solve did not converge; check
 * [`lobpcg_report_status`].
 *
 * # Safety
 * Handles must be live or `NULL` where allowed; `out` must be writable.
 */
enum LobpcgError lobpcg_solve(const struct LobpcgOperator *a,
                              const struct LobpcgOperator *b,
                              const struct LobpcgPreconditioner *t,
                              const struct LobpcgConfig *cfg,
                              const double *x0,
                              struct LobpcgReport **out);

/**
 * `total` eigenpairs in stages of `cfg.block_size`, each stage constrained
 * against the vectors found before it.
 *
 * # Safety
 * As for [`lobpcg_solve`].
 */
enum LobpcgError lobpcg_solve_staged(const struct LobpcgOperator *a,
                                     const struct LobpcgOperator *b,
                                     const struct LobpcgPreconditioner *t,
                                     const struct LobpcgConfig *cfg,
                                     size_t total,
                                     struct LobpcgReport **out);

/**
 * Number of eigenpairs held by `r`, 0 for `NULL`.
 *
 * # Safety
 * `r` must be a live report or `NULL`.
 */
size_t lobpcg_report_count(const struct LobpcgReport *r);

/**
 * Length of each eigenvector, 0 for `NULL`.
 *
 * # Safety
 * `r` must be a live report or `NULL`.
 */
size_t lobpcg_report_dim(const struct LobpcgReport *r);

/**
 * # Safety
 * `r` must be a live report or `NULL`.
 */
size_t lobpcg_report_iterations(const struct LobpcgReport *r);

/**
 * # Safety
 * `r` must be a live report; `NULL` gives `Failed`.
 */
enum LobpcgStatus lobpcg_report_status(const struct LobpcgReport *r);

/**
 * Number of basis fallbacks taken during the solve.
 *
 * # Safety
 * `r` must be a live report or `NULL`.
 */
size_t lobpcg_report_fallbacks(const struct LobpcgReport *r);

/**
 * Copies the ascending eigenvalues into `out` (`len >= count`).
 *
 * # Safety
 * `out` must hold `len` writable doubles.
 */
enum LobpcgError lobpcg_report_eigenvalues(const struct LobpcgReport *r, double *out, size_t len);

/**
 * Copies the final residual norms into `out` (`len >= count`).
 *
 * # Safety
 * `out` must hold `len` writable doubles.
 */
enum LobpcgError lobpcg_report_residuals(const struct LobpcgReport *r, double *out, size_t len);

/**
 * Copies the eigenvectors, column-major, into `out` (`len >= dim * count`).
 *
 * # Safety
 * `out` must hold `len` writable doubles.
 */
enum LobpcgError lobpcg_report_eigenvectors(const struct LobpcgReport *r, double *out, size_t len);

/**
 * # Safety
 * `r` must be a report from this library or `NULL`, and not used afterwards.
 */
void lobpcg_report_free(struct LobpcgReport *r);

/**
 * The `m` smallest eigenvalues of the grid Laplacian, in closed form.
 *
 * # Safety
 * `out` must hold `m` writable doubles.
 */
enum LobpcgError lobpcg_exact_eigenvalues(size_t nx, size_t ny, size_t nz, size_t m, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LOBPCG_H */
