#ifndef PDEINFO_H
#define PDEINFO_H

/* Generated by cbindgen from crates/ffi/src; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PdiStatus {
  PDI_STATUS_OK = 0,
  /**
   * A run completed but at least one of its checks failed.
   */
  PDI_STATUS_CHECK_FAILED = 1,
  /**
   * Bad config, schema violation or IO failure.
   */
  PDI_STATUS_CONFIG = 2,
  /**
   * Quadrature, solver or factorization failure, or a rejected model.
   */
  PDI_STATUS_NUMERICAL = 3,
  PDI_STATUS_INVALID_ARGUMENT = 4,
  PDI_STATUS_NULL_POINTER = 5,
  PDI_STATUS_BUFFER_TOO_SMALL = 6,
  PDI_STATUS_PANIC = 7,
} PdiStatus;

/**
 * Galerkin information matrix M with its factorization.
 */
typedef struct PdiInfoMatrix PdiInfoMatrix;

/**
 * Forward model on a fixed wavenumber box and time grid.
 */
typedef struct PdiModel PdiModel;

/**
 * Noise density with its Fisher matrix.
 */
typedef struct PdiNoise PdiNoise;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *pdi_version(void);

/**
 * Message of the last failure on this thread, or NULL. Valid until the
 * next failing call on the same thread.
 */
const char *pdi_last_error(void);

/**
 * Noise model from JSON such as `{"family": "gaussian", "variance": 0.25}`.
 *
 * # Safety
 * `json_text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PdiStatus pdi_noise_from_json(const char *json_text, struct PdiNoise **out);

/**
 * Dimension p of the noise (1 or 2).
 *
 * # Safety
 * `noise` must be a live handle or NULL.
 */
size_t pdi_noise_dim(const struct PdiNoise *noise);

/**
 * Writes the p×p Fisher matrix 𝓘_ε, computed by quadrature, into `out`.
 *
 * # Safety
 * `noise` must be a live handle and `out` must hold `len` doubles.
 */
enum PdiStatus pdi_noise_fisher(const struct PdiNoise *noise, double *out, size_t len);

/**
 * # Safety
 * `noise` must come from [`pdi_noise_from_json`] and not be used afterwards.
 */
void pdi_noise_free(struct PdiNoise *noise);

/**
 * Forward model from the JSON `model` block of a config, e.g.
 * `{"kind": "heat", "d": 1, "T": 1.0}`, on the wavenumber box `kmax` with
 * `steps` time steps.
 *
 * # Safety
 * `json_text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PdiStatus pdi_model_from_json(const char *json_text,
                                   size_t kmax,
                                   size_t steps,
                                   struct PdiModel **out);

/**
 * Number of eigenvectors the model's box holds.
 *
 * # Safety
 * `model` must be a live handle or NULL.
 */
size_t pdi_model_modes(const struct PdiModel *model);

/**
 * Writes the Laplacian eigenvalues of the first `len` modes.
 *
 * # Safety
 * `model` must be a live handle and `out` must hold `len` doubles.
 */
enum PdiStatus pdi_model_eigenvalues(const struct PdiModel *model, double *out, size_t len);

/**
 * # Safety
 * `model` must come from [`pdi_model_from_json`] and not be used afterwards.
 */
void pdi_model_free(struct PdiModel *model);

/**
 * Assembles the K×K information matrix at θ₀ (`theta0_len` may be 0 for
 * θ₀ = 0). `design_json` may be NULL for the uniform design.
 *
 * # Safety
 * Handles must be live, `theta0` must hold `theta0_len` doubles and `out`
 * must be a valid pointer.
 */
enum PdiStatus pdi_info_matrix_assemble(const struct PdiModel *model,
                                        const struct PdiNoise *noise,
                                        const char *design_json,
                                        const double *theta0,
                                        size_t theta0_len,
                                        size_t k,
                                        struct PdiInfoMatrix **out);

/**
 * # Safety
 * `info` must be a live handle or NULL.
 */
size_t pdi_info_matrix_dim(const struct PdiInfoMatrix *info);

/**
 * Copies M into `out` (K×K, row-major).
 *
 * # Safety
 * `info` must be a live handle and `out` must hold `len` doubles.
 */
enum PdiStatus pdi_info_matrix_copy(const struct PdiInfoMatrix *info, double *out, size_t len);

/**
 * Efficiency bound ψᵀM⁻¹ψ.
 *
 * # Safety
 * `info` must be a live handle, `psi` must hold `len` doubles and `out`
 * must point to one double.
 */
enum PdiStatus pdi_info_matrix_s_norm_sq(const struct PdiInfoMatrix *info,
                                         const double *psi,
                                         size_t len,
                                         double *out);

/**
 * Draws `m` samples of the efficient Gaussian N(0, M⁻¹) into `out`
 * (m×K, row-major). Results depend only on `seed`.
 *
 * # Safety
 * `info` must be a live handle and `out` must hold `len` doubles.
 */
enum PdiStatus pdi_info_matrix_sample(const struct PdiInfoMatrix *info,
                                      size_t m,
                                      uint64_t seed,
                                      double *out,
                                      size_t len);

/**
 * # Safety
 * `info` must come from [`pdi_info_matrix_assemble`] and not be used
 * afterwards.
 */
void pdi_info_matrix_free(struct PdiInfoMatrix *info);

/**
 * Runs an experiment config (TOML, or JSON when `is_json` is nonzero) into
 * `out_dir`, as `pdeinfo run` does. Returns `PDI_STATUS_CHECK_FAILED` when
 * the run completed with failing checks.
 *
 * # Safety
 * Both strings must be NUL-terminated.
 */
enum PdiStatus pdi_run_config(const char *config_text, int is_json, const char *out_dir, int force);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PDEINFO_H */
