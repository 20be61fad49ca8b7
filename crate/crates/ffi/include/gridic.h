#ifndef GRIDIC_H
#define GRIDIC_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GridicMethod {
  GRIDIC_METHOD_TRAPEZOIDAL = 0,
  GRIDIC_METHOD_BACKWARD_EULER = 1,
} GridicMethod;

typedef enum GridicStatus {
  GRIDIC_STATUS_OK = 0,
  GRIDIC_STATUS_NULL_POINTER = 1,
  GRIDIC_STATUS_INVALID_UTF8 = 2,
  /**
   * Schema, reference or consistency error in the case, or a bad
   * argument.
   */
  GRIDIC_STATUS_INVALID_INPUT = 3,
  /**
   * Power flow or transient Newton did not converge.
   */
  GRIDIC_STATUS_CONVERGENCE = 4,
  GRIDIC_STATUS_IO = 5,
  GRIDIC_STATUS_OUT_OF_RANGE = 6,
  GRIDIC_STATUS_PANIC = 7,
} GridicStatus;

/**
 * A parsed case.
 */
typedef struct GridicCase GridicCase;

/**
 * Probed channels of a finished run.
 */
typedef struct GridicSeries GridicSeries;

/**
 * Run settings. Obtain defaults from [`gridic_config_default`].
 */
typedef struct GridicConfig {
  double dt;
  double t_stop;
  enum GridicMethod method;
  /**
   * Start the power flow from the voltages stored in the case.
   */
  bool seed_voltages;
  /**
   * Integrate the direct DAE reference instead of the circuit.
   */
  bool reference;
} GridicConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * Valid until the next call on the same thread.
 */
const char *gridic_last_error(void);

/**
 * Library version, static storage.
 */
const char *gridic_version(void);

struct GridicConfig gridic_config_default(void);

/**
 * Parses a case from a NUL-terminated JSON string.
 *
 * # Safety
 * `json` must be a valid C string and `out` writable.
 */
enum GridicStatus gridic_case_from_json(const char *json, struct GridicCase **out);

/**
 * Reads and parses a case file.
 *
 * # Safety
 * `path` must be a valid C string and `out` writable.
 */
enum GridicStatus gridic_case_from_file(const char *path, struct GridicCase **out);

/**
 * # Safety
 * `case` must come from a `gridic_case_from_*` call and not be freed
 * twice. Null is ignored.
 */
void gridic_case_free(struct GridicCase *case_);

/**
 * # Safety
 * `case` must be a live handle and `out` writable.
 */
enum GridicStatus gridic_case_bus_count(const struct GridicCase *case_, size_t *out);

/**
 * Solves the power flow and writes, per bus in case order, the bus id,
 * voltage magnitude (pu) and angle (rad) into arrays of length `len`,
 * which must equal the bus count. Any output pointer may be null.
 *
 * # Safety
 * Non-null arrays must hold `len` elements.
 */
enum GridicStatus gridic_power_flow(const struct GridicCase *case_,
                                    bool seed_voltages,
                                    uint32_t *ids,
                                    double *vmag,
                                    double *angle,
                                    size_t len);

/**
 * Runs the case's scenario. `config` may be null for the defaults.
 *
 * # Safety
 * `case` must be a live handle, `config` null or valid, `out` writable.
 */
enum GridicStatus gridic_run(const struct GridicCase *case_,
                             const struct GridicConfig *config,
                             struct GridicSeries **out);

/**
 * # Safety
 * `series` must come from [`gridic_run`] and not be freed twice. Null is
 * ignored.
 */
void gridic_series_free(struct GridicSeries *series);

/**
 * Number of samples; 0 for a null handle.
 *
 * # Safety
 * `series` must be null or a live handle.
 */
size_t gridic_series_len(const struct GridicSeries *series);

/**
 * Number of channels, not counting time; 0 for a null handle.
 *
 * # Safety
 * `series` must be null or a live handle.
 */
size_t gridic_series_channel_count(const struct GridicSeries *series);

/**
 * Name of channel `index`, owned by the handle; null when out of range.
 *
 * # Safety
 * `series` must be null or a live handle.
 */
const char *gridic_series_channel_name(const struct GridicSeries *series, size_t index);

/**
 * Copies the sample times into `buf` (at least `gridic_series_len`
 * entries).
 *
 * # Safety
 * `buf` must hold `len` doubles.
 */
enum GridicStatus gridic_series_time(const struct GridicSeries *series, double *buf, size_t len);

/**
 * Copies channel `index` into `buf`.
 *
 * # Safety
 * `buf` must hold `len` doubles.
 */
enum GridicStatus gridic_series_channel(const struct GridicSeries *series,
                                        size_t index,
                                        double *buf,
                                        size_t len);

/**
 * Index of the channel called `name`.
 *
 * # Safety
 * `name` must be a valid C string and `out` writable.
 */
enum GridicStatus gridic_series_find(const struct GridicSeries *series,
                                     const char *name,
                                     size_t *out);

/**
 * Writes the series as CSV.
 *
 * # Safety
 * `path` must be a valid C string.
 */
enum GridicStatus gridic_series_write_csv(const struct GridicSeries *series, const char *path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GRIDIC_H */
