#ifndef DFRC_H
#define DFRC_H

/* Generated with cbindgen:0.29.4 */

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum DfrcStatus {
  DFRC_STATUS_OK = 0,
  DFRC_STATUS_NULL_POINTER = 1,
  DFRC_STATUS_INVALID_ARGUMENT = 2,
  DFRC_STATUS_CONFIG = 3,
  DFRC_STATUS_INFEASIBLE = 4,
  DFRC_STATUS_NUMERIC = 5,
  DFRC_STATUS_IO = 6,
  DFRC_STATUS_PANIC = 7,
} DfrcStatus;

/**
 * Beamforming architecture.
 */
typedef enum DfrcArchitecture {
  /**
   * Reconfigurable subarrays.
   */
  DFRC_ARCHITECTURE_RS = 0,
  /**
   * Persistently connected subarrays.
   */
  DFRC_ARCHITECTURE_PC = 1,
  /**
   * Fully digital.
   */
  DFRC_ARCHITECTURE_FD = 2,
} DfrcArchitecture;

/**
 * A channel realization, radar scene and SCNR target.
 */
typedef struct DfrcProblem DfrcProblem;

/**
 * An optimized design.
 */
typedef struct DfrcSolution DfrcSolution;

/**
 * System dimensions and powers in linear units (watts, meters).
 */
typedef struct DfrcConfig {
  uint32_t tx_antennas;
  uint32_t rx_antennas;
  uint32_t tx_rf_chains;
  uint32_t rx_rf_chains;
  uint32_t users;
  uint32_t user_antennas;
  uint32_t streams_per_user;
  double transmit_power;
  double user_noise;
  double radar_noise;
  double wavelength;
  double spacing;
} DfrcConfig;

/**
 * Scalar outcome of a solve.
 */
typedef struct DfrcSummary {
  double sum_rate;
  /**
   * SCNR with the best receiver for the final transmitter, linear.
   */
  double scnr;
  /**
   * SCNR with the designed hybrid receiver, linear.
   */
  double scnr_receiver;
  double violation;
  double transmit_power;
  uint32_t outer_iterations;
  /**
   * 1 when the outer loop met its tolerance.
   */
  uint8_t converged;
} DfrcSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *dfrc_version(void);

/**
 * Message of the last failing call on this thread, or NULL if none.
 * The pointer stays valid until the next failing call on this thread.
 */
const char *dfrc_last_error_message(void);

/**
 * Clears the last error message of this thread.
 */
void dfrc_clear_last_error(void);

/**
 * Fills `out` with the desk-scale system (16 x 8 antennas, 4 + 4 RF chains,
 * two single-stream users).
 *
 * # Safety
 * `out` must be NULL or point to writable memory for one `DfrcConfig`.
 */
enum DfrcStatus dfrc_config_desk_scale(struct DfrcConfig *out);

/**
 * Draws a channel for `cfg` from `seed` (users at 80 m, three paths each,
 * target at broadside, clutter at +-30 degrees) and stores the problem with
 * an SCNR target of `gamma_db` in `*out`.
 *
 * # Safety
 * `cfg` must be NULL or point to a valid `DfrcConfig`; `out` must be NULL or
 * point to writable memory for one pointer.
 */
enum DfrcStatus dfrc_problem_new(const struct DfrcConfig *cfg,
                                 double gamma_db,
                                 uint64_t seed,
                                 struct DfrcProblem **out);

/**
 * Releases a problem. NULL is ignored.
 *
 * # Safety
 * `problem` must be NULL or a pointer from `dfrc_problem_new` not yet freed.
 */
void dfrc_problem_free(struct DfrcProblem *problem);

/**
 * Optimizes `problem` for `arch` with default solver settings; the
 * optimizer start is drawn from `seed`.
 *
 * # Safety
 * `problem` must be NULL or a live problem handle; `out` must be NULL or
 * point to writable memory for one pointer.
 */
enum DfrcStatus dfrc_solve(const struct DfrcProblem *problem,
                           enum DfrcArchitecture arch,
                           uint64_t seed,
                           struct DfrcSolution **out);

/**
 * Copies the scalar results of `solution` into `out`.
 *
 * # Safety
 * `solution` must be NULL or a live solution handle; `out` must be NULL or
 * point to writable memory for one `DfrcSummary`.
 */
enum DfrcStatus dfrc_solution_summary(const struct DfrcSolution *solution, struct DfrcSummary *out);

/**
 * Writes the peak-normalized beampattern (dB) of `solution` at the `len`
 * angles of `grid_deg` (degrees) into `out`.
 *
 * # Safety
 * `grid_deg` and `out` must each be NULL or point to `len` doubles.
 */
enum DfrcStatus dfrc_solution_beampattern(const struct DfrcSolution *solution,
                                          const double *grid_deg,
                                          size_t len,
                                          double *out);

/**
 * Releases a solution. NULL is ignored.
 *
 * # Safety
 * `solution` must be NULL or a pointer from `dfrc_solve` not yet freed.
 */
void dfrc_solution_free(struct DfrcSolution *solution);

/**
 * Detection probability of a Swerling-0 target at linear `scnr` and
 * false-alarm probability `p_fa`.
 *
 * # Safety
 * `out` must be NULL or point to writable memory for one double.
 */
enum DfrcStatus dfrc_detection_probability(double scnr, double p_fa, double *out);

/**
 * Runs the experiment file at `spec_path` and writes its result files into
 * `out_dir`. `threads` = 0 uses every core. `*infeasible` (if not NULL)
 * receives the number of trials that missed their constraints.
 *
 * # Safety
 * `spec_path` and `out_dir` must be NULL or NUL-terminated strings;
 * `infeasible` must be NULL or point to writable memory for one `size_t`.
 */
enum DfrcStatus dfrc_run_experiment_file(const char *spec_path,
                                         const char *out_dir,
                                         uint32_t threads,
                                         size_t *infeasible);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DFRC_H */
