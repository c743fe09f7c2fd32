#ifndef MUPFL_H
#define MUPFL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MupflStatus {
  MUPFL_STATUS_OK = 0,
  MUPFL_STATUS_NULL_POINTER = 1,
  MUPFL_STATUS_INVALID_UTF8 = 2,
  MUPFL_STATUS_CONFIG = 3,
  MUPFL_STATUS_INVALID_ARGUMENT = 4,
  MUPFL_STATUS_IO = 5,
  MUPFL_STATUS_MALFORMED = 6,
  MUPFL_STATUS_NON_FINITE = 7,
  MUPFL_STATUS_BUFFER_TOO_SMALL = 8,
  MUPFL_STATUS_PANIC = 9,
} MupflStatus;

/**
 * Opaque simulation handle.
 */
typedef struct MupflSimulation MupflSimulation;

/**
 * Scalar summary of one round.
 */
typedef struct MupflRoundMetrics {
  uint64_t round;
  double global_acc;
  double mean_client_acc;
  double tail_acc;
  uint64_t kappa;
  double silhouette;
  double pkcf_loss;
  double mean_train_loss;
} MupflRoundMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent failure on this thread (empty if none). The
 * pointer stays valid until the next failing call on this thread.
 */
const char *mupfl_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mupfl_version(void);

/**
 * Builds a simulation from TOML config text.
 *
 * # Safety
 * `config_toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MupflStatus mupfl_simulation_new(const char *config_toml, struct MupflSimulation **out);

/**
 * Restores a simulation from a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MupflStatus mupfl_simulation_load_checkpoint(const char *path, struct MupflSimulation **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `sim` must come from this library and not be used afterwards.
 */
void mupfl_simulation_free(struct MupflSimulation *sim);

/**
 * Runs one round; `out` may be null.
 *
 * # Safety
 * `sim` must be a live handle; `out`, if non-null, must be writable.
 */
enum MupflStatus mupfl_simulation_run_round(struct MupflSimulation *sim,
                                            struct MupflRoundMetrics *out);

/**
 * Rounds completed so far (0 for a null handle).
 *
 * # Safety
 * `sim` must be null or a live handle.
 */
uint64_t mupfl_simulation_rounds_done(const struct MupflSimulation *sim);

/**
 * Number of parameters in the global model.
 *
 * # Safety
 * `sim` must be a live handle and `out_len` writable.
 */
enum MupflStatus mupfl_simulation_num_params(const struct MupflSimulation *sim, size_t *out_len);

/**
 * Copies the flattened global model (extractor then classifier) into `buf`.
 *
 * # Safety
 * `sim` must be a live handle and `buf` must hold `len` doubles.
 */
enum MupflStatus mupfl_simulation_global_params(const struct MupflSimulation *sim,
                                                double *buf,
                                                size_t len);

/**
 * Writes a checkpoint file.
 *
 * # Safety
 * `sim` must be a live handle and `path` a NUL-terminated string.
 */
enum MupflStatus mupfl_simulation_save_checkpoint(const struct MupflSimulation *sim,
                                                  const char *path);

/**
 * Mean silhouette of `labels` under the row-major `n x n` distance matrix.
 *
 * # Safety
 * `labels` must hold `n` values, `dist` `n * n` values, `out` writable.
 */
enum MupflStatus mupfl_silhouette(const size_t *labels, const double *dist, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MUPFL_H */
