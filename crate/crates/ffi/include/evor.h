#ifndef EVOR_H
#define EVOR_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// On-disk dataset encodings.
typedef enum EvorDatasetFormat {
  EVOR_DATASET_FORMAT_BINARY = 0,
  EVOR_DATASET_FORMAT_TEXT = 1,
} EvorDatasetFormat;

// Built-in environments.
typedef enum EvorEnv {
  EVOR_ENV_CHAIN2 = 0,
  EVOR_ENV_GRIDWORLD5 = 1,
  EVOR_ENV_BIMODAL_BANDIT = 2,
  EVOR_ENV_POINTMASS_MAZE = 3,
} EvorEnv;

// Outcome of a call.
typedef enum EvorStatus {
  EVOR_STATUS_OK = 0,
  EVOR_STATUS_NULL_POINTER = 1,
  EVOR_STATUS_INPUT_DOMAIN = 2,
  EVOR_STATUS_CONFIG = 3,
  EVOR_STATUS_SHAPE = 4,
  EVOR_STATUS_NUMERIC = 5,
  EVOR_STATUS_UNSUPPORTED = 6,
  EVOR_STATUS_FORMAT = 7,
  EVOR_STATUS_IO = 8,
  EVOR_STATUS_PANIC = 9,
} EvorStatus;

// A trained agent loaded from a checkpoint bundle.
typedef struct EvorAgent EvorAgent;

// Exact oracle tables of a finite environment under its reference policy.
typedef struct EvorOracle EvorOracle;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copy the calling thread's last error message into `buf` (NUL-terminated,
// truncated to `len` bytes). Returns the buffer size the full message needs,
// or 0 when the last call on this thread succeeded.
//
// # Safety
// `buf` is null or valid for writes of `len` bytes.
size_t evor_last_error_message(char *buf, size_t len);

// `tau * ln(mean exp(samples / tau))`, computed stably.
//
// # Safety
// `samples` is valid for reads of `len` doubles; `out` for one write.
enum EvorStatus evor_log_mean_exp(const double *samples, size_t len, double tau, double *out);

// Exact tables for the environment with `EvorEnv` code `env` (finite
// environments only), the reference mixture weighting the near-optimal mode
// by `optimal_weight`.
//
// # Safety
// `out` is valid for one pointer write.
enum EvorStatus evor_oracle_new(uint32_t env,
                                double optimal_weight,
                                double eta,
                                struct EvorOracle **out);

// Optimal regularised action value at `(step, state, action)`; states
// unreachable at `step` are input errors.
//
// # Safety
// `oracle` is a live handle; `out` is valid for one write.
enum EvorStatus evor_oracle_q_star(const struct EvorOracle *oracle,
                                   size_t step,
                                   size_t state,
                                   size_t action,
                                   double *out);

// Reference-policy action value at `(step, state, action)`.
//
// # Safety
// `oracle` is a live handle; `out` is valid for one write.
enum EvorStatus evor_oracle_q_pi(const struct EvorOracle *oracle,
                                 size_t step,
                                 size_t state,
                                 size_t action,
                                 double *out);

// # Safety
// `oracle` is null or a handle from [`evor_oracle_new`] not yet freed.
void evor_oracle_free(struct EvorOracle *oracle);

// Load a checkpoint bundle; extraction parameters start at the values the
// bundle was trained with.
//
// # Safety
// `path` is a NUL-terminated string; `out` is valid for one pointer write.
enum EvorStatus evor_agent_load(const char *path, struct EvorAgent **out);

// Observation width the agent expects.
//
// # Safety
// `agent` is null or a live handle.
size_t evor_agent_obs_dim(const struct EvorAgent *agent);

// Width of an action embedding (one-hot width for discrete actions).
//
// # Safety
// `agent` is null or a live handle.
size_t evor_agent_action_dim(const struct EvorAgent *agent);

// Override the candidate count and both temperatures used for extraction.
//
// # Safety
// `agent` is a live handle.
enum EvorStatus evor_agent_set_extraction(struct EvorAgent *agent,
                                          size_t candidates,
                                          double tau_r,
                                          double tau_q);

// Extract one action for `obs`, deterministic in `seed`. The action
// embedding is written to `action_out`; `index_out`, when non-null, receives
// the discrete action index or -1 for continuous actions. Chunked agents
// return the first action of the chosen chunk.
//
// # Safety
// `agent` is a live handle; `obs` is valid for `obs_len` reads and
// `action_out` for `action_len` writes; `index_out` is null or valid for one
// write.
enum EvorStatus evor_agent_extract_action(const struct EvorAgent *agent,
                                          const double *obs,
                                          size_t obs_len,
                                          uint64_t seed,
                                          double *action_out,
                                          size_t action_len,
                                          int64_t *index_out);

// # Safety
// `agent` is null or a handle from [`evor_agent_load`] not yet freed.
void evor_agent_free(struct EvorAgent *agent);

// Generate `n_traj` reference-policy trajectories (default mixture weights)
// of the environment with `EvorEnv` code `env` and write them to `path` in
// the `EvorDatasetFormat` encoding `format`.
//
// # Safety
// `path` is a NUL-terminated string.
enum EvorStatus evor_dataset_generate(uint32_t env,
                                      size_t n_traj,
                                      uint64_t seed,
                                      uint32_t format,
                                      const char *path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EVOR_H */
