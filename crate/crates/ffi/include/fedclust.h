#ifndef FEDCLUST_H
#define FEDCLUST_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FcStatus {
  FC_STATUS_OK = 0,
  /**
   * Null pointer, bad UTF-8 or an undersized output buffer.
   */
  FC_STATUS_INVALID_ARGUMENT = 1,
  /**
   * Rejected configuration or inconsistent input data.
   */
  FC_STATUS_VALIDATION = 2,
  /**
   * The run itself failed (I/O, numerics).
   */
  FC_STATUS_RUNTIME = 3,
  FC_STATUS_PANIC = 4,
} FcStatus;

typedef enum FcPreset {
  FC_PRESET_PAPER = 0,
  FC_PRESET_DESK = 1,
} FcPreset;

typedef struct FcConfig FcConfig;

typedef struct FcParams FcParams;

typedef struct FcRun FcRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread; empty when none. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *fc_last_error(void);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void fc_string_free(char *s);

/**
 * Built-in configuration for `preset`.
 *
 * # Safety
 * `out` must be valid for a pointer write.
 */
enum FcStatus fc_config_preset(enum FcPreset preset, struct FcConfig **out);

/**
 * Parses TOML text layered over `preset`. Relative data paths resolve against
 * `base_dir`, or the working directory when it is null.
 *
 * # Safety
 * `toml` and a non-null `base_dir` must be NUL-terminated strings; `out` must
 * be valid for a pointer write.
 */
enum FcStatus fc_config_from_toml(const char *toml,
                                  enum FcPreset preset,
                                  const char *base_dir,
                                  struct FcConfig **out);

/**
 * # Safety
 * `cfg` must be a live config handle.
 */
enum FcStatus fc_config_set_seed(struct FcConfig *cfg, uint64_t seed);

/**
 * Resolved configuration as TOML; free with [`fc_string_free`].
 *
 * # Safety
 * `cfg` must be a live config handle and `out` valid for a pointer write.
 */
enum FcStatus fc_config_to_toml(const struct FcConfig *cfg, char **out);

/**
 * # Safety
 * `cfg` must be null or a handle not yet freed.
 */
void fc_config_free(struct FcConfig *cfg);

/**
 * Runs dynamic clustering on `workers` threads.
 *
 * # Safety
 * `cfg` must be a live config handle and `out` valid for a pointer write.
 */
enum FcStatus fc_run_dynamic(const struct FcConfig *cfg, size_t workers, struct FcRun **out);

/**
 * Runs the feature-clustering baseline on `workers` threads.
 *
 * # Safety
 * `cfg` must be a live config handle and `out` valid for a pointer write.
 */
enum FcStatus fc_run_baseline(const struct FcConfig *cfg, size_t workers, struct FcRun **out);

/**
 * # Safety
 * `run` must be a live run handle.
 */
size_t fc_run_final_k(const struct FcRun *run);

/**
 * Membership-weighted test MSE; NaN for a null handle.
 *
 * # Safety
 * `run` must be a live run handle.
 */
double fc_run_test_mse(const struct FcRun *run);

/**
 * Sample-level purity of the initial clustering. Writes `false` to
 * `available` when the data carries no ground truth.
 *
 * # Safety
 * `run` must be a live run handle; `purity` and `available` valid for writes.
 */
enum FcStatus fc_run_purity(const struct FcRun *run, double *purity, bool *available);

/**
 * Final cluster of every client, ordered by client id. `len` receives the
 * client count; with null buffers only the count is reported.
 *
 * # Safety
 * Non-null `clients` and `clusters` must each hold `cap` elements; `len`
 * must be valid for a write.
 */
enum FcStatus fc_run_assignment(const struct FcRun *run,
                                size_t *clients,
                                uint32_t *clusters,
                                size_t cap,
                                size_t *len);

/**
 * Run summary as JSON; free with [`fc_string_free`].
 *
 * # Safety
 * `run` must be a live run handle and `out` valid for a pointer write.
 */
enum FcStatus fc_run_summary_json(const struct FcRun *run, char **out);

/**
 * Writes summary, metrics log, assignment history and `cfg` into `dir`.
 *
 * # Safety
 * Handles must be live and `dir` a NUL-terminated string.
 */
enum FcStatus fc_run_write(const struct FcRun *run, const struct FcConfig *cfg, const char *dir);

/**
 * # Safety
 * `run` must be null or a handle not yet freed.
 */
void fc_run_free(struct FcRun *run);

/**
 * Freshly initialized LSTM forecaster: `input_len` steps in, `horizon` out.
 *
 * # Safety
 * `out` must be valid for a pointer write.
 */
enum FcStatus fc_params_forecaster(size_t input_len,
                                   size_t units,
                                   size_t horizon,
                                   uint64_t seed,
                                   struct FcParams **out);

/**
 * Number of scalar parameters; 0 for a null handle.
 *
 * # Safety
 * `params` must be null or a live handle.
 */
size_t fc_params_len(const struct FcParams *params);

/**
 * Copies the flat parameter vector into `values`, which holds `cap` entries.
 *
 * # Safety
 * `params` must be live and `values` valid for `cap` writes.
 */
enum FcStatus fc_params_get(const struct FcParams *params, double *values, size_t cap);

/**
 * Overwrites the parameters with `len` values, which must match
 * [`fc_params_len`] and be finite.
 *
 * # Safety
 * `params` must be live and `values` valid for `len` reads.
 */
enum FcStatus fc_params_set(struct FcParams *params, const double *values, size_t len);

/**
 * Forecast for one input window.
 *
 * # Safety
 * `params` must be live, `input` valid for `input_len` reads and `output`
 * for `output_cap` writes.
 */
enum FcStatus fc_params_forward(const struct FcParams *params,
                                const double *input,
                                size_t input_len,
                                double *output,
                                size_t output_cap);

/**
 * Weighted federated average of `n` same-shaped parameter sets.
 *
 * # Safety
 * `params` must point to `n` live handles and `weights` to `n` values;
 * `out` must be valid for a pointer write.
 */
enum FcStatus fc_fedavg(const struct FcParams *const *params,
                        const double *weights,
                        size_t n,
                        struct FcParams **out);

/**
 * # Safety
 * `params` must be null or a handle not yet freed.
 */
void fc_params_free(struct FcParams *params);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDCLUST_H */
