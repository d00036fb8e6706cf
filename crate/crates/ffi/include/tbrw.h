#ifndef TBRW_H
#define TBRW_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum TbrwStatus {
  TBRW_STATUS_OK = 0,
  /*
   Null pointer or out-of-range argument.
   */
  TBRW_STATUS_INVALID_ARGUMENT = 1,
  /*
   Invalid parameters or a violated precondition.
   */
  TBRW_STATUS_PRECONDITION = 2,
  /*
   Non-convergence or an exceeded cap.
   */
  TBRW_STATUS_NUMERIC = 3,
  TBRW_STATUS_INVARIANT = 4,
  TBRW_STATUS_INTERNAL = 5,
} TbrwStatus;

typedef enum TbrwPhase {
  TBRW_PHASE_TRANSIENT = 0,
  TBRW_PHASE_NULL_RECURRENT = 1,
  TBRW_PHASE_POSITIVE_RECURRENT = 2,
} TbrwPhase;

/*
 Opaque truncated mean matrix.
 */
typedef struct TbrwMatrix TbrwMatrix;

/*
 Opaque model parameters (ρ, ν).
 */
typedef struct TbrwParams TbrwParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread; empty after a success.
 The pointer stays valid until the next call on this thread.
 */
const char *tbrw_last_error_message(void);

/*
 Parameters from JSON such as `{"rho":3,"nu":{"type":"point_mass","m":1}}`.

 # Safety
 `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TbrwStatus tbrw_params_from_json(const char *json, struct TbrwParams **out);

/*
 Parameters with ν a point mass at `m`.

 # Safety
 `out` must be a valid pointer.
 */
enum TbrwStatus tbrw_params_point_mass(double rho, uint64_t m, struct TbrwParams **out);

/*
 # Safety
 `params` must come from a `tbrw_params_*` constructor or be null.
 */
void tbrw_params_free(struct TbrwParams *params);

/*
 Mean offspring count ν̄; sets `is_infinite` when it diverges.

 # Safety
 All pointers must be valid.
 */
enum TbrwStatus tbrw_nu_bar(const struct TbrwParams *params, double *out, bool *is_infinite);

/*
 Critical bias `1 + 2ν̄`; sets `is_infinite` when ν̄ diverges.

 # Safety
 All pointers must be valid.
 */
enum TbrwStatus tbrw_critical_rho(const struct TbrwParams *params, double *out, bool *is_infinite);

/*
 # Safety
 All pointers must be valid.
 */
enum TbrwStatus tbrw_classify_phase(const struct TbrwParams *params, enum TbrwPhase *out);

/*
 The `l × l` truncation of the mean matrix of the branching chain.

 # Safety
 All pointers must be valid.
 */
enum TbrwStatus tbrw_mean_matrix_new(const struct TbrwParams *params,
                                     size_t l,
                                     struct TbrwMatrix **out);

/*
 # Safety
 `matrix` must come from `tbrw_mean_matrix_new` or be null.
 */
void tbrw_matrix_free(struct TbrwMatrix *matrix);

/*
 Side length, or 0 for a null handle.

 # Safety
 `matrix` must be a valid handle or null.
 */
size_t tbrw_matrix_size(const struct TbrwMatrix *matrix);

/*
 Entry `M_{i,j}` with 1-based indices.

 # Safety
 All pointers must be valid.
 */
enum TbrwStatus tbrw_matrix_get(const struct TbrwMatrix *matrix, size_t i, size_t j, double *out);

/*
 Dominant eigenvalue by power iteration to relative tolerance `tol`.

 # Safety
 All pointers must be valid.
 */
enum TbrwStatus tbrw_matrix_spectral_radius(const struct TbrwMatrix *matrix,
                                            double tol,
                                            double *out);

/*
 Largest relative residual over `k ≤ k_max` of the left-eigenvector
 identity for `f(i) = ρ^{-i}`, and its eigenvalue.

 # Safety
 All pointers must be valid.
 */
enum TbrwStatus tbrw_eigen_check(const struct TbrwParams *params,
                                 size_t l,
                                 size_t k_max,
                                 double *residual,
                                 double *lambda);

/*
 Both sides of the generating-function identity for column `k` at `s`.

 # Safety
 All pointers must be valid.
 */
enum TbrwStatus tbrw_generating_identity(const struct TbrwParams *params,
                                         size_t k,
                                         double s,
                                         double *lhs,
                                         double *rhs);

/*
 One urn run up to the `k`-th draw of color 0 on stream `(seed, stream)`:
 the draw time Θ_k and the number of nonzero colors N_k.

 # Safety
 All pointers must be valid.
 */
enum TbrwStatus tbrw_urn_run(const struct TbrwParams *params,
                             size_t k,
                             uint64_t seed,
                             uint64_t stream,
                             uint64_t *theta_k,
                             uint64_t *n_k);

/*
 Library version as a static NUL-terminated string.
 */
const char *tbrw_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TBRW_H */
