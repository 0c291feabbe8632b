#ifndef TRO_FFI_H
#define TRO_FFI_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every function.
 */
typedef enum TroStatus {
  TRO_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  TRO_STATUS_NULL = 1,
  TRO_STATUS_INVALID_INPUT = 2,
  TRO_STATUS_NOT_IN_SPAN = 3,
  TRO_STATUS_DEGENERATE = 4,
  TRO_STATUS_PRECONDITION = 5,
  TRO_STATUS_INTERNAL = 6,
  /**
   * A Rust panic was caught at the boundary.
   */
  TRO_STATUS_PANIC = 7,
} TroStatus;

/**
 * A conditional expectation on the linking algebra of an instance.
 */
typedef struct TroExpectation TroExpectation;

/**
 * An instance file after parsing and validation.
 */
typedef struct TroInstance TroInstance;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *tro_version(void);

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *tro_last_error(void);

/**
 * Parses an instance file from NUL-terminated JSON text.
 *
 * # Safety
 * `json` must be a valid C string and `out` a valid pointer.
 */
enum TroStatus tro_instance_from_json(const char *json, struct TroInstance **out);

/**
 * Generates an instance. `family` is one of `corner`, `group`, `random`,
 * `degenerate`; `kind` names the degenerate kind and may be null otherwise.
 * Zero ranks select full-rank corner projections.
 *
 * # Safety
 * String arguments must be valid C strings or null where allowed; `out` must
 * be a valid pointer.
 */
enum TroStatus tro_instance_generate(const char *family,
                                     size_t m,
                                     size_t n,
                                     size_t rank_e,
                                     size_t rank_f,
                                     size_t order,
                                     const char *kind,
                                     uint64_t seed,
                                     struct TroInstance **out);

/**
 * Writes the instance file JSON (17 significant digits) to `*out`.
 *
 * # Safety
 * `inst` must be a live handle and `out` a valid pointer.
 */
enum TroStatus tro_instance_to_json(const struct TroInstance *inst, char **out);

/**
 * Ambient shape `dim_k × dim_h` and the dimensions of T and X (0 if absent).
 *
 * # Safety
 * `inst` must be a live handle; each out-pointer must be valid.
 */
enum TroStatus tro_instance_dims(const struct TroInstance *inst,
                                 size_t *dim_k,
                                 size_t *dim_h,
                                 size_t *dim_t,
                                 size_t *dim_x);

/**
 * Runs a CLI command (`check-tro`, `extend`, ...) on the instance.
 *
 * `*report` receives the JSON report and `*pass` is 1 when every mandatory
 * check passed. Mathematical failures are reported with `TRO_STATUS_OK`
 * and `*pass == 0`. Pass 0 for `amp_level` or `restarts` to use the defaults.
 *
 * # Safety
 * Pointers must be valid; `inst` must be a live handle.
 */
enum TroStatus tro_run(const struct TroInstance *inst,
                       const char *command,
                       size_t amp_level,
                       size_t restarts,
                       char **report,
                       int *pass);

/**
 * Builds `E = [[PP†, P], [P†, P†P]]` for the instance's P.
 *
 * # Safety
 * `inst` must be a live handle and `out` a valid pointer.
 */
enum TroStatus tro_extend(const struct TroInstance *inst, struct TroExpectation **out);

/**
 * Side length `dim_k + dim_h` of the matrices E acts on.
 *
 * # Safety
 * `e` must be a live handle.
 */
enum TroStatus tro_expectation_size(const struct TroExpectation *e, size_t *size);

/**
 * Applies E to a `size × size` matrix; `im` may be null for real input.
 * The input is first projected onto the linking algebra.
 *
 * # Safety
 * Input arrays must hold `size * size` values, output arrays likewise.
 */
enum TroStatus tro_expectation_apply(const struct TroExpectation *e,
                                     const double *re,
                                     const double *im,
                                     double *out_re,
                                     double *out_im);

/**
 * Checks the conditional-expectation axioms; `*pass` is 1 on success and
 * `*worst_residual` receives the largest residual.
 *
 * # Safety
 * `e` must be a live handle; out-pointers must be valid.
 */
enum TroStatus tro_expectation_verify(const struct TroExpectation *e,
                                      size_t amp_level,
                                      uint64_t seed,
                                      int *pass,
                                      double *worst_residual);

/**
 * Operator norm (largest singular value) of a `rows × cols` matrix.
 *
 * # Safety
 * `re` (and `im` unless null) must hold `rows * cols` values.
 */
enum TroStatus tro_operator_norm(size_t rows,
                                 size_t cols,
                                 const double *re,
                                 const double *im,
                                 double *out);

/**
 * # Safety
 * `s` must come from this library or be null.
 */
void tro_string_free(char *s);

/**
 * # Safety
 * `inst` must come from this library or be null.
 */
void tro_instance_free(struct TroInstance *inst);

/**
 * # Safety
 * `e` must come from this library or be null.
 */
void tro_expectation_free(struct TroExpectation *e);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRO_FFI_H */
