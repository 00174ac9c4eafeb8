#ifndef POROREF_H
#define POROREF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PororefStatus {
  POROREF_STATUS_OK = 0,
  POROREF_STATUS_NULL_POINTER = 1,
  POROREF_STATUS_INVALID_ARGUMENT = 2,
  POROREF_STATUS_CONFIG = 3,
  POROREF_STATUS_DIVERGENCE = 4,
  POROREF_STATUS_IO = 5,
  POROREF_STATUS_BUFFER_TOO_SMALL = 6,
  POROREF_STATUS_PANIC = 7,
} PororefStatus;

typedef enum PororefFormulation {
  POROREF_FORMULATION_PRIMAL = 0,
  POROREF_FORMULATION_MIXED_P = 1,
  POROREF_FORMULATION_MIXED_U = 2,
} PororefFormulation;

typedef enum PororefProblem {
  POROREF_PROBLEM_FORWARD = 0,
  POROREF_PROBLEM_REFCONF = 1,
} PororefProblem;

typedef enum PororefCommand {
  POROREF_COMMAND_FORWARD = 0,
  POROREF_COMMAND_REFCONF = 1,
  POROREF_COMMAND_ROUNDTRIP = 2,
  POROREF_COMMAND_AA_SWEEP = 3,
  POROREF_COMMAND_ORACLE = 4,
} PororefCommand;

// Run configuration.
typedef struct PororefConfig PororefConfig;

// JSON summary of a file-writing command.
typedef struct PororefReport PororefReport;

// Stationary state of a single run, kept in memory.
typedef struct PororefSolution PororefSolution;

// Scalar outcome of a single run.
typedef struct PororefRunStats {
  size_t total_steps;
  size_t iterations;
  size_t fallbacks;
  size_t newton_iterations;
  double phi_avg;
  double final_rel_residual;
  double t_final;
} PororefRunStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf`.
//
// # Safety
// `buf` must be writable for `cap` bytes; `needed` may be null.
enum PororefStatus pororef_last_error(char *buf, size_t cap, size_t *needed);

// Default configuration (2D round trip, 16x16 cells).
//
// # Safety
// `out` must be a valid pointer.
enum PororefStatus pororef_config_default(struct PororefConfig **out);

// Configuration from TOML text; unknown keys are rejected.
//
// # Safety
// `toml` must be a NUL-terminated string and `out` a valid pointer.
enum PororefStatus pororef_config_from_toml(const char *toml, struct PororefConfig **out);

// # Safety
// `cfg` must come from a `pororef_config_*` constructor or be null.
void pororef_config_free(struct PororefConfig *cfg);

// Effective configuration as TOML.
//
// # Safety
// `cfg` must be valid; `buf` writable for `cap` bytes; `needed` may be null.
enum PororefStatus pororef_config_to_toml(const struct PororefConfig *cfg,
                                          char *buf,
                                          size_t cap,
                                          size_t *needed);

// # Safety
// `cfg` must be valid.
enum PororefStatus pororef_config_set_tol(struct PororefConfig *cfg, double tol);

// # Safety
// `cfg` must be valid.
enum PororefStatus pororef_config_set_formulation(struct PororefConfig *cfg,
                                                  enum PororefFormulation f);

// Cell counts per axis; `dim` is 2 or 3 and must match the mesh lengths.
//
// # Safety
// `cfg` must be valid and `cells` readable for `dim` values.
enum PororefStatus pororef_config_set_mesh(struct PororefConfig *cfg,
                                           const size_t *cells,
                                           size_t dim);

// Anderson depth list; single runs use the first entry.
//
// # Safety
// `cfg` must be valid and `depths` readable for `len` values.
enum PororefStatus pororef_config_set_aa_depths(struct PororefConfig *cfg,
                                                const size_t *depths,
                                                size_t len);

// # Safety
// `cfg` must be valid and `dir` NUL-terminated.
enum PororefStatus pororef_config_set_output_dir(struct PororefConfig *cfg, const char *dir);

// Runs one problem to stationarity without writing files.
//
// # Safety
// `cfg` must be valid and `out` a valid pointer.
enum PororefStatus pororef_solve(const struct PororefConfig *cfg,
                                 enum PororefProblem problem,
                                 struct PororefSolution **out);

// # Safety
// `sol` must come from [`pororef_solve`] or be null.
void pororef_solution_free(struct PororefSolution *sol);

// # Safety
// `sol` and `out` must be valid.
enum PororefStatus pororef_solution_stats(const struct PororefSolution *sol,
                                          struct PororefRunStats *out);

// Number of mesh vertices of the solved system.
//
// # Safety
// `sol` and `out` must be valid.
enum PororefStatus pororef_solution_num_vertices(const struct PororefSolution *sol, size_t *out);

// Vertex porosity values (`len` must equal the vertex count).
//
// # Safety
// `sol` must be valid and `buf` writable for `len` values.
enum PororefStatus pororef_solution_porosity(const struct PororefSolution *sol,
                                             double *buf,
                                             size_t len);

// Vertex displacement, three interleaved components per vertex
// (`len` must equal 3 times the vertex count).
//
// # Safety
// `sol` must be valid and `buf` writable for `len` values.
enum PororefStatus pororef_solution_displacement(const struct PororefSolution *sol,
                                                 double *buf,
                                                 size_t len);

// Runs a CLI command, writing its files into the configured output directory.
//
// # Safety
// `cfg` must be valid and `out` a valid pointer.
enum PororefStatus pororef_execute(const struct PororefConfig *cfg,
                                   enum PororefCommand command,
                                   struct PororefReport **out);

// # Safety
// `report` must be valid; `buf` writable for `cap` bytes; `needed` may be null.
enum PororefStatus pororef_report_json(const struct PororefReport *report,
                                       char *buf,
                                       size_t cap,
                                       size_t *needed);

// # Safety
// `report` must come from [`pororef_execute`] or be null.
void pororef_report_free(struct PororefReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POROREF_H */
