#ifndef INTERMIT_SIM_H
#define INTERMIT_SIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ImsStatus {
  IMS_STATUS_OK = 0,
  IMS_STATUS_NULL_POINTER = 1,
  IMS_STATUS_INVALID_ARGUMENT = 2,
  IMS_STATUS_INVALID_CONFIG = 3,
  /**
   * The run hit the power-cycle cap; the result holds the partial run.
   */
  IMS_STATUS_LIVELOCK = 4,
  IMS_STATUS_NO_PROGRESS = 5,
  IMS_STATUS_RESTORE_MISMATCH = 6,
  IMS_STATUS_SIMULATION_FAILED = 7,
  IMS_STATUS_PANIC = 8,
} ImsStatus;

typedef enum ImsStrategy {
  IMS_STRATEGY_DICA = 0,
  IMS_STRATEGY_FULL = 1,
  IMS_STRATEGY_SWDIFF = 2,
} ImsStrategy;

typedef enum ImsVttMode {
  IMS_VTT_MODE_FAITHFUL = 0,
  IMS_VTT_MODE_EXACT = 1,
} ImsVttMode;

typedef enum ImsWorkload {
  IMS_WORKLOAD_MATMUL = 0,
  IMS_WORKLOAD_BITCOUNT = 1,
  IMS_WORKLOAD_DFS = 2,
  IMS_WORKLOAD_CIPHER = 3,
  IMS_WORKLOAD_HASH = 4,
} ImsWorkload;

/**
 * Simulation configuration.
 */
typedef struct ImsConfig ImsConfig;

/**
 * Standalone dirty-block table.
 */
typedef struct ImsDTable ImsDTable;

typedef struct ImsResult {
  bool completed;
  bool output_matches_oracle;
  uint64_t power_cycles;
  uint64_t total_cycles;
  uint64_t app_cycles;
  uint64_t checkpoint_cycles;
  uint64_t restore_cycles;
  uint64_t checkpoints_taken;
  uint64_t checkpoint_failures;
  uint64_t blocks_copied_total;
  uint64_t power_losses;
  uint64_t instructions;
  uint64_t stack_blocks_cleaned;
  uint64_t calibration_n;
  double lambda_initial;
  double lambda_final;
} ImsResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Text of the last failure on this thread, empty after a success. The
 * pointer stays valid until the next call on the same thread.
 */
const char *ims_last_error_message(void);

/**
 * Text of a status code. Static storage.
 */
const char *ims_status_name(enum ImsStatus status);

/**
 * Creates a configuration with default values.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum ImsStatus ims_config_new(struct ImsConfig **out);

/**
 * Parses a configuration file's JSON text. Accepts either a full
 * experiment config (`{"sim": {...}}`) or its `sim` section alone.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` valid for writes.
 */
enum ImsStatus ims_config_from_json(const char *json, struct ImsConfig **out);

/**
 * # Safety
 * `config` must come from an `ims_config_*` constructor, or be null.
 */
void ims_config_free(struct ImsConfig *config);

/**
 * # Safety
 * `config` must be a live handle.
 */
enum ImsStatus ims_config_set_strategy(struct ImsConfig *config, enum ImsStrategy strategy);

/**
 * Sets the workload. `size` 0 keeps the workload's default size.
 *
 * # Safety
 * `config` must be a live handle.
 */
enum ImsStatus ims_config_set_workload(struct ImsConfig *config,
                                       enum ImsWorkload workload,
                                       uint32_t size);

/**
 * Sets the capacitance as a cycle budget per full charge.
 *
 * # Safety
 * `config` must be a live handle.
 */
enum ImsStatus ims_config_set_budget(struct ImsConfig *config, uint64_t budget_cycles);

/**
 * # Safety
 * `config` must be a live handle.
 */
enum ImsStatus ims_config_set_block_size(struct ImsConfig *config, uint32_t block_size);

/**
 * # Safety
 * `config` must be a live handle.
 */
enum ImsStatus ims_config_set_seed(struct ImsConfig *config, uint64_t seed);

/**
 * # Safety
 * `config` must be a live handle.
 */
enum ImsStatus ims_config_set_vtt_mode(struct ImsConfig *config, enum ImsVttMode mode);

/**
 * Calibrated checkpoint count per charge, the raw slope
 * `(v_full - v_min) / n`, and the slope after the safety margin, which is
 * what the threshold uses. `threshold_lambda` may be null.
 *
 * # Safety
 * `config` must be a live handle; `n` and `lambda` valid for writes.
 */
enum ImsStatus ims_calibrate(const struct ImsConfig *config,
                             uint64_t *n,
                             double *lambda,
                             double *threshold_lambda);

/**
 * Runs the configured simulation. On `IMS_STATUS_LIVELOCK` `out` holds the
 * partial result; on other failures it is left untouched.
 *
 * # Safety
 * `config` must be a live handle and `out` valid for writes.
 */
enum ImsStatus ims_simulate(const struct ImsConfig *config, struct ImsResult *out);

/**
 * Runs the simulation and returns the full JSON report, as printed by the
 * `simulate` command. The string is returned for livelock and simulation
 * failures too; release it with [`ims_string_free`].
 *
 * # Safety
 * `config` must be a live handle and `out` valid for writes.
 */
enum ImsStatus ims_simulate_json(const struct ImsConfig *config, char **out);

/**
 * # Safety
 * `s` must come from this library, or be null.
 */
void ims_string_free(char *s);

/**
 * Creates an all-clean table over the default 8 KiB volatile memory.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum ImsStatus ims_dtable_new(uint32_t block_size, struct ImsDTable **out);

/**
 * # Safety
 * `table` must come from [`ims_dtable_new`], or be null.
 */
void ims_dtable_free(struct ImsDTable *table);

/**
 * Records a write. Addresses outside volatile memory are ignored.
 * `newly_set` may be null.
 *
 * # Safety
 * `table` must be a live handle.
 */
enum ImsStatus ims_dtable_record_write(struct ImsDTable *table, uint32_t addr, bool *newly_set);

/**
 * Clears blocks lying entirely in `[SP_Lim, sp)`. `cleared` may be null.
 *
 * # Safety
 * `table` must be a live handle.
 */
enum ImsStatus ims_dtable_stack_clean(struct ImsDTable *table, uint32_t sp, size_t *cleared);

/**
 * Number of dirty blocks, or 0 for a null handle.
 *
 * # Safety
 * `table` must be a live handle or null.
 */
size_t ims_dtable_count(const struct ImsDTable *table);

/**
 * Number of blocks the table tracks, or 0 for a null handle.
 *
 * # Safety
 * `table` must be a live handle or null.
 */
size_t ims_dtable_len(const struct ImsDTable *table);

/**
 * # Safety
 * `table` must be a live handle or null.
 */
bool ims_dtable_is_dirty(const struct ImsDTable *table, size_t index);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* INTERMIT_SIM_H */
