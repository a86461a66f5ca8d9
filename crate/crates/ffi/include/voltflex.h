/* voltflex C API */

#ifndef VOLTFLEX_H
#define VOLTFLEX_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Sentinel for "no seed override" in [`vf_run_scenario`].
#define VF_NO_SEED_OVERRIDE UINT64_MAX

// Status codes returned by every fallible entry point.
typedef enum VfStatus {
  VF_STATUS_OK = 0,
  // Invalid configuration, file contents, or argument values.
  VF_STATUS_CONFIG_ERROR = 1,
  // Runtime failure (io, solver divergence).
  VF_STATUS_RUNTIME_ERROR = 2,
  // A required pointer argument was null.
  VF_STATUS_NULL_ARGUMENT = 3,
  // A string argument was not valid UTF-8.
  VF_STATUS_INVALID_UTF8 = 4,
  // A panic was caught at the boundary; state may be stale.
  VF_STATUS_PANIC = 5,
} VfStatus;

// Opaque radial feeder handle.
typedef struct VfFeeder VfFeeder;

// Scenario summary returned by [`vf_run_scenario`].
typedef struct VfSummary {
  double rmse_kw;
  double safety_probability;
  uint64_t violation_count;
  uint64_t steps;
} VfSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread. Borrowed; valid until
// the next failing call on the same thread.
const char *vf_last_error_message(void);

// Load a feeder from a JSON file. On success writes a new handle that must
// be released with [`vf_feeder_free`].
//
// # Safety
// `path` must be a valid NUL-terminated string; `out` must be valid for a
// single pointer write.
enum VfStatus vf_feeder_load(const char *path, struct VfFeeder **out);

// Release a feeder handle. Null is a no-op.
//
// # Safety
// `feeder` must be a handle from this library, freed at most once.
void vf_feeder_free(struct VfFeeder *feeder);

// Number of nodes excluding the substation.
//
// # Safety
// `feeder` must be a live handle; `out` valid for one write.
enum VfStatus vf_feeder_node_count(const struct VfFeeder *feeder, size_t *out);

// Exact branch-flow solve; writes `len` per-unit voltage magnitudes.
//
// # Safety
// Pointers must reference arrays of length `len`; `feeder` must be live.
enum VfStatus vf_feeder_solve_distflow(const struct VfFeeder *feeder,
                                       const double *real_pu,
                                       const double *reactive_pu,
                                       size_t len,
                                       double *voltages_out);

// Linearized solve; same contract as [`vf_feeder_solve_distflow`].
//
// # Safety
// Pointers must reference arrays of length `len`; `feeder` must be live.
enum VfStatus vf_feeder_solve_lindistflow(const struct VfFeeder *feeder,
                                          const double *real_pu,
                                          const double *reactive_pu,
                                          size_t len,
                                          double *voltages_out);

// Run one scenario from a JSON config file. Pass [`VF_NO_SEED_OVERRIDE`]
// to keep the config's seed. When `out_dir` is non-null, results.jsonl,
// summary.csv and plot.csv are written there.
//
// # Safety
// `config_path` must be valid; `out_dir` may be null; `summary_out` must be
// valid for one struct write.
enum VfStatus vf_run_scenario(const char *config_path,
                              uint64_t seed_override,
                              const char *out_dir,
                              struct VfSummary *summary_out);

// Sample-count threshold of the sequential acceptance test:
// `ln(1/beta) / ((m + eps) ln(m + eps) - (m + eps - 1))`. Returns +inf when
// the estimate cannot satisfy the test.
double vf_certify_min_samples(double m_estimate, double epsilon, double beta);

// Run the sequential acceptance test against a synthetic Bernoulli stream
// with success probability `nu`. Writes whether it accepted and how many
// samples it spent.
//
// # Safety
// `accepted_out` and `samples_out` must each be valid for one write.
enum VfStatus vf_certify_bernoulli(double nu,
                                   double epsilon,
                                   double beta,
                                   uint64_t max_samples,
                                   uint64_t batch_size,
                                   uint64_t seed,
                                   int32_t *accepted_out,
                                   uint64_t *samples_out);

// Library version as a static NUL-terminated string.
const char *vf_version(void);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* VOLTFLEX_H */
