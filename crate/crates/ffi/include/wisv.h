#ifndef WISV_H
#define WISV_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code of every fallible call.
 */
typedef enum WisvStatus {
  Ok = 0,
  NullPointer = 1,
  InvalidUtf8 = 2,
  Config = 3,
  InvalidArgument = 4,
  DimensionMismatch = 5,
  Infeasible = 6,
  NonFinite = 7,
  Dataset = 8,
  Format = 9,
  Io = 10,
  Panic = 11,
} WisvStatus;

/**
 * Uplink protocol selector for [`wisv_comm_latency`].
 */
typedef enum WisvProtocol {
  FullHidden = 0,
  SelectiveHidden = 1,
  TokensOnly = 2,
  Probabilities = 3,
} WisvProtocol;

/**
 * Trained decision head.
 */
typedef struct WisvHead WisvHead;

/**
 * Simulator built from an experiment config.
 */
typedef struct WisvSimulator WisvSimulator;

/**
 * Aggregate metrics of one simulated grid point.
 */
typedef struct WisvMetrics {
  double aal;
  double rounds;
  double latency_s;
  double throughput;
  double accuracy_proxy;
  /**
   * Mean per episode.
   */
  double uplink_bits;
  /**
   * Mean per episode.
   */
  double downlink_bits;
} WisvMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *wisv_version(void);

/**
 * Copies the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length excluding the NUL,
 * or 0 when there is no error.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
uintptr_t wisv_last_error(char *buf, uintptr_t len);

/**
 * Builds a simulator from TOML config text (empty text means defaults).
 *
 * # Safety
 * `config_toml` must be a NUL-terminated string; `out` must be writable.
 */
enum WisvStatus wisv_simulator_new(const char *config_toml, struct WisvSimulator **out);

/**
 * # Safety
 * `sim` must be null or a handle from [`wisv_simulator_new`] not yet freed.
 */
void wisv_simulator_free(struct WisvSimulator *sim);

/**
 * Calibrated per-position match probability of the simulator's oracle.
 *
 * # Safety
 * `sim` must be a live handle; `out` must be writable.
 */
enum WisvStatus wisv_simulator_p_match(const struct WisvSimulator *sim, double *out);

/**
 * Loads head params written by the `train` stage; a JSON sidecar next to the
 * file, if present, supplies whether the head uses CSI features.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum WisvStatus wisv_head_load(const char *path, struct WisvHead **out);

/**
 * # Safety
 * `head` must be null or a handle from [`wisv_head_load`] not yet freed.
 */
void wisv_head_free(struct WisvHead *head);

/**
 * Input width of the head.
 *
 * # Safety
 * `head` must be a live handle; `out` must be writable.
 */
enum WisvStatus wisv_head_input_dim(const struct WisvHead *head, uintptr_t *out);

/**
 * Rejection probability for one feature vector of length `len`.
 *
 * # Safety
 * `head` must be a live handle, `z` must point to `len` doubles and
 * `out_prob` must be writable.
 */
enum WisvStatus wisv_head_forward(const struct WisvHead *head,
                                  const double *z,
                                  uintptr_t len,
                                  double *out_prob);

/**
 * Simulates `episodes` episodes of `mode` (e.g. `"sd_greedy"`, `"wisv_fh"`)
 * on a fixed symmetric link. `head` may be null for modes without a head.
 *
 * # Safety
 * `sim` must be a live handle, `head` null or live, `mode` NUL-terminated
 * and `out` writable.
 */
enum WisvStatus wisv_run_point(const struct WisvSimulator *sim,
                               const struct WisvHead *head,
                               const char *mode,
                               uintptr_t k,
                               double tau,
                               double rate_bps,
                               double rtt_s,
                               uintptr_t episodes,
                               struct WisvMetrics *out);

/**
 * Communication latency (seconds) of one round with the simulator's wire
 * config. `m` is the number of requested hiddens and only matters for SH.
 *
 * # Safety
 * `sim` must be a live handle; `out_s` must be writable.
 */
enum WisvStatus wisv_comm_latency(const struct WisvSimulator *sim,
                                  enum WisvProtocol protocol,
                                  uint64_t k,
                                  uint64_t m,
                                  double rate_bps,
                                  double rtt_s,
                                  double *out_s);

/**
 * Per-position match probability giving greedy AAL `target_aal` at window `k`.
 *
 * # Safety
 * `out` must be writable.
 */
enum WisvStatus wisv_calibrate_p_match(double target_aal, uint64_t k, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WISV_H */
