#ifndef SPECPREDICT_H
#define SPECPREDICT_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum SpStatus {
  SP_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  SP_STATUS_NULL_POINTER = 1,
  /**
   * An argument is malformed (bad UTF-8, index out of bounds, short buffer).
   */
  SP_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Scenario JSON could not be parsed or failed validation.
   */
  SP_STATUS_INVALID_SCENARIO = 3,
  /**
   * Parameters are well-formed but the computation is undefined for them.
   */
  SP_STATUS_DOMAIN = 4,
  /**
   * File system failure.
   */
  SP_STATUS_IO = 5,
  /**
   * The call panicked; the library state is unaffected.
   */
  SP_STATUS_INTERNAL = 6,
} SpStatus;

/**
 * Answer of [`sp_scenario_interference_range`].
 */
typedef enum SpRangeKind {
  SP_RANGE_KIND_CROSSING = 0,
  SP_RANGE_KIND_ALWAYS_IN = 1,
  SP_RANGE_KIND_ALWAYS_OUT = 2,
} SpRangeKind;

/**
 * Surroundings of a secondary receiver.
 */
typedef enum SpClutterEnv {
  SP_CLUTTER_ENV_OPEN = 0,
  SP_CLUTTER_ENV_SUBURBAN = 1,
  SP_CLUTTER_ENV_URBAN = 2,
} SpClutterEnv;

/**
 * Result of [`sp_predict`].
 */
typedef struct SpReport SpReport;

/**
 * A validated scenario.
 */
typedef struct SpScenario SpScenario;

/**
 * Link description passed by value.
 */
typedef struct SpLinkGeometry {
  double distance_km;
  double h_tx_m;
  double h_rx_m;
  double freq_mhz;
  double time_pct;
  enum SpClutterEnv clutter_env;
  double loc_pct;
} SpLinkGeometry;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until the
 * next call into this library on the same thread.
 */
const char *sp_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sp_version(void);

/**
 * Parses and validates a scenario document. Relative loss-table paths are
 * resolved against `base_dir`, which may be null for the working directory.
 */
enum SpStatus sp_scenario_from_json(const char *json,
                                    const char *base_dir,
                                    struct SpScenario **out);

/**
 * Loads a scenario file; relative table paths resolve against its directory.
 */
enum SpStatus sp_scenario_load(const char *path, struct SpScenario **out);

void sp_scenario_free(struct SpScenario *scenario);

enum SpStatus sp_scenario_user_count(const struct SpScenario *scenario, size_t *out);

enum SpStatus sp_scenario_n_steps(const struct SpScenario *scenario, size_t *out);

/**
 * Replaces the Monte Carlo seed (no effect on analytic scenarios).
 */
enum SpStatus sp_scenario_set_seed(struct SpScenario *scenario, uint64_t seed);

/**
 * Exclusion distance for the scenario's primary, using user `user_index` as
 * the receiver template. `out_km` is written only for a crossing.
 */
enum SpStatus sp_scenario_interference_range(const struct SpScenario *scenario,
                                             size_t user_index,
                                             double d_min_km,
                                             double d_max_km,
                                             enum SpRangeKind *out_kind,
                                             double *out_km);

/**
 * Runs the scenario. `workers == 0` uses all available cores; the worker
 * count never changes results.
 */
enum SpStatus sp_predict(const struct SpScenario *scenario,
                         uint32_t workers,
                         struct SpReport **out);

void sp_report_free(struct SpReport *report);

/**
 * Sizes of a report. Analytic reports have zero replicas.
 */
enum SpStatus sp_report_shape(const struct SpReport *report,
                              size_t *out_users,
                              size_t *out_steps,
                              size_t *out_replicas);

/**
 * User id, or null for an out-of-bounds index. Owned by the report.
 */
const char *sp_report_user_id(const struct SpReport *report, size_t user_index);

/**
 * Whether the user lies inside the primary's interference range, and the
 * fraction of free cells (Monte Carlo) or mean free probability (analytic).
 */
enum SpStatus sp_report_user_summary(const struct SpReport *report,
                                     size_t user_index,
                                     bool *out_in_range,
                                     double *out_availability,
                                     double *out_p_rx_dbm);

/**
 * Copies primary states `X_1..X_N` (0 idle, 1 active) into `buf`.
 */
enum SpStatus sp_report_primary(const struct SpReport *report,
                                size_t replica_index,
                                uint8_t *buf,
                                size_t len);

/**
 * Copies a user's availability timeline (0 free, 1 occupied) into `buf`.
 */
enum SpStatus sp_report_states(const struct SpReport *report,
                               size_t replica_index,
                               size_t user_index,
                               uint8_t *buf,
                               size_t len);

/**
 * Copies per-step occupancy: exact probabilities for analytic reports,
 * ensemble frequencies over replicas for Monte Carlo reports.
 */
enum SpStatus sp_report_occupancy(const struct SpReport *report,
                                  size_t user_index,
                                  double *buf,
                                  size_t len);

/**
 * Stationary idle/active probabilities.
 */
enum SpStatus sp_stationary(double lambda, double mu, double *out_idle, double *out_active);

/**
 * Estimates transition probabilities from `len` states (each 0 or 1).
 */
enum SpStatus sp_estimate(const uint8_t *states,
                          size_t len,
                          bool add_one,
                          double *out_lambda,
                          double *out_mu);

/**
 * Free-space loss for `geometry`, dB.
 */
enum SpStatus sp_free_space_loss(struct SpLinkGeometry geometry, double *out_db);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPECPREDICT_H */
