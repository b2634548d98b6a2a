/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef PDNS_H
#define PDNS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum PdnsStatus {
  PDNS_STATUS_OK = 0,
  PDNS_STATUS_NULL_POINTER = 1,
  PDNS_STATUS_INVALID_ARGUMENT = 2,
  PDNS_STATUS_CONFIG = 3,
  PDNS_STATUS_NUMERIC = 4,
  PDNS_STATUS_IO = 5,
  PDNS_STATUS_CHECKPOINT = 6,
  PDNS_STATUS_PANIC = 7,
} PdnsStatus;

/**
 * A trained sampler: its run configuration and EMA parameters.
 */
typedef struct PdnsSampler PdnsSampler;

/**
 * A parsed energy target.
 */
typedef struct PdnsTarget PdnsTarget;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * The message of the last failed call on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *pdns_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pdns_version(void);

/**
 * Parses a target from the text of a `[target]` table, e.g.
 * `kind = "ising"\nside = 8\ncoupling = 1.0\nbeta = 0.6`.
 *
 * # Safety
 * `toml_text` must be a NUL-terminated string and `out` a writable pointer.
 */
enum PdnsStatus pdns_target_from_toml(const char *toml_text, struct PdnsTarget **out);

/**
 * Releases a target; NULL is ignored.
 *
 * # Safety
 * `target` must come from [`pdns_target_from_toml`] and not be used afterwards.
 */
void pdns_target_free(struct PdnsTarget *target);

/**
 * State dimension (continuous) or sequence length (discrete).
 *
 * # Safety
 * `target` must be a live handle and `out` a writable pointer.
 */
enum PdnsStatus pdns_target_dim(const struct PdnsTarget *target, size_t *out);

/**
 * Whether the target lives on a discrete state space.
 *
 * # Safety
 * `target` must be a live handle and `out` a writable pointer.
 */
enum PdnsStatus pdns_target_is_discrete(const struct PdnsTarget *target, bool *out);

/**
 * Unnormalized log density `-beta V(x)` of a continuous target.
 *
 * # Safety
 * `x` must point to `len` readable doubles and `out` be writable.
 */
enum PdnsStatus pdns_target_log_density(const struct PdnsTarget *target,
                                        const double *x,
                                        size_t len,
                                        double *out);

/**
 * Unnormalized log mass `-beta V(x)` of a discrete target; `x` holds values
 * in `0..alphabet`.
 *
 * # Safety
 * `x` must point to `len` readable bytes and `out` be writable.
 */
enum PdnsStatus pdns_target_log_density_discrete(const struct PdnsTarget *target,
                                                 const uint8_t *x,
                                                 size_t len,
                                                 double *out);

/**
 * Loads a sampler from a run config file and a checkpoint written under it.
 * Fails with `Checkpoint` when the config hash does not match.
 *
 * # Safety
 * Both paths must be NUL-terminated strings and `out` a writable pointer.
 */
enum PdnsStatus pdns_sampler_load(const char *config_path,
                                  const char *checkpoint_path,
                                  struct PdnsSampler **out);

/**
 * Releases a sampler; NULL is ignored.
 *
 * # Safety
 * `sampler` must come from [`pdns_sampler_load`] and not be used afterwards.
 */
void pdns_sampler_free(struct PdnsSampler *sampler);

/**
 * Values per sample.
 *
 * # Safety
 * `sampler` must be a live handle and `out` a writable pointer.
 */
enum PdnsStatus pdns_sampler_dim(const struct PdnsSampler *sampler, size_t *out);

/**
 * Whether the sampler produces discrete sequences.
 *
 * # Safety
 * `sampler` must be a live handle and `out` a writable pointer.
 */
enum PdnsStatus pdns_sampler_is_discrete(const struct PdnsSampler *sampler, bool *out);

/**
 * Draws up to `n` samples from a continuous sampler. `states` receives
 * `n * dim` doubles row by row and `log_w` the matching log importance
 * weights; `written` is set to the number of rows filled, which is below
 * `n` only when trajectories were dropped as non-finite.
 *
 * # Safety
 * `states` must hold `n * dim` doubles, `log_w` `n` doubles, and `written`
 * must be writable.
 */
enum PdnsStatus pdns_sampler_sample(const struct PdnsSampler *sampler,
                                    size_t n,
                                    uint64_t seed,
                                    double *states,
                                    double *log_w,
                                    size_t *written);

/**
 * As [`pdns_sampler_sample`] for discrete samplers, with one byte per site.
 *
 * # Safety
 * `states` must hold `n * dim` bytes, `log_w` `n` doubles, and `written`
 * must be writable.
 */
enum PdnsStatus pdns_sampler_sample_discrete(const struct PdnsSampler *sampler,
                                             size_t n,
                                             uint64_t seed,
                                             uint8_t *states,
                                             double *log_w,
                                             size_t *written);

/**
 * Normalized effective sample size `1 / (n sum w_i^2)` of `n` log weights.
 *
 * # Safety
 * `log_w` must point to `n` readable doubles and `out` be writable.
 */
enum PdnsStatus pdns_ess(const double *log_w, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PDNS_H */
