#ifndef HELITRACK_H
#define HELITRACK_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes shared by all entry points.
typedef enum HtStatus {
  HT_STATUS_OK = 0,
  // A required pointer argument was null.
  HT_STATUS_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  HT_STATUS_INVALID_UTF8 = 2,
  // Malformed or invalid input document.
  HT_STATUS_SCHEMA = 3,
  // The simulation diverged; rows up to the blow-up are kept.
  HT_STATUS_DIVERGENCE = 4,
  // The trajectory optimization found no feasible solution.
  HT_STATUS_INFEASIBLE = 5,
  HT_STATUS_IO = 6,
  // Operation not valid in the handle's current state.
  HT_STATUS_INVALID_STATE = 7,
  // Index or buffer size out of range.
  HT_STATUS_OUT_OF_RANGE = 8,
  // A Rust panic was caught at the boundary.
  HT_STATUS_INTERNAL = 9,
  HT_STATUS_OTHER = 10,
} HtStatus;

// Opaque simulation handle.
typedef struct HtSimulation HtSimulation;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Owned by the
// library and valid until the next call on this thread.
const char *ht_last_error(void);

// Library version as a static string.
const char *ht_version(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void ht_string_free(char *s);

// Creates a simulation from scenario JSON.
//
// # Safety
// `json` must be a nul-terminated string; `out` must be writable.
enum HtStatus ht_simulation_new(const char *json, struct HtSimulation **out);

// Creates a simulation from a built-in preset name.
//
// # Safety
// `name` must be a nul-terminated string; `out` must be writable.
enum HtStatus ht_simulation_from_preset(const char *name, struct HtSimulation **out);

// Releases a simulation. Null is ignored.
//
// # Safety
// `sim` must come from this library and not have been freed.
void ht_simulation_free(struct HtSimulation *sim);

// Runs the scenario, replacing any previous log. A divergence returns
// `Divergence` and keeps the rows logged before it.
//
// # Safety
// `sim` must be a live handle.
enum HtStatus ht_simulation_run(struct HtSimulation *sim);

// Resolved scenario as JSON.
//
// # Safety
// `sim` must be a live handle; `out` must be writable.
enum HtStatus ht_simulation_scenario_json(const struct HtSimulation *sim, char **out);

// Number of values per logged row.
size_t ht_column_count(void);

// Name of column `index`, or null when out of range. Static storage.
const char *ht_column_name(size_t index);

// Number of logged rows.
//
// # Safety
// `sim` must be a live handle; `rows` must be writable.
enum HtStatus ht_simulation_row_count(const struct HtSimulation *sim, size_t *rows);

// Copies row `index` into `buf`, which must hold `ht_column_count()` values.
//
// # Safety
// `sim` must be a live handle; `buf` must point to `len` writable doubles.
enum HtStatus ht_simulation_row(const struct HtSimulation *sim,
                                size_t index,
                                double *buf,
                                size_t len);

// Writes the log as CSV to `path`.
//
// # Safety
// `sim` must be a live handle; `path` must be a nul-terminated string.
enum HtStatus ht_simulation_write_csv(const struct HtSimulation *sim, const char *path);

// The log as a CSV string.
//
// # Safety
// `sim` must be a live handle; `out` must be writable.
enum HtStatus ht_simulation_csv(const struct HtSimulation *sim, char **out);

// Linearizes the equilibria. `params_json` may be null for defaults; the
// report is written to `out` as JSON.
//
// # Safety
// `params_json` must be null or nul-terminated; `out` must be writable.
enum HtStatus ht_linearize(const char *params_json, char **out);

// Solves a flip from FlipSpec JSON. Writes the knot table as CSV to
// `csv_out` and the compressed schedule as JSON to `poly_out`.
//
// # Safety
// `spec_json` must be nul-terminated; both outputs must be writable.
enum HtStatus ht_optimize_flip(const char *spec_json, char **csv_out, char **poly_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HELITRACK_H */
