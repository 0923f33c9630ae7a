#ifndef POLYDECOUPLE_H
#define POLYDECOUPLE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result codes of every fallible entry point.
 */
typedef enum PdStatus {
  PD_STATUS_OK = 0,
  /*
   A required pointer argument was NULL.
   */
  PD_STATUS_NULL_POINTER = 1,
  /*
   An argument is out of range or a string is not valid UTF-8.
   */
  PD_STATUS_INVALID_ARGUMENT = 2,
  /*
   JSON input did not parse or did not match the schema.
   */
  PD_STATUS_PARSE_ERROR = 3,
  /*
   Buffer lengths or model/system shapes do not agree.
   */
  PD_STATUS_DIMENSION_MISMATCH = 4,
  /*
   The system is constant, so its Jacobian tensor is zero.
   */
  PD_STATUS_CONSTANT_SYSTEM = 5,
  /*
   No CP rank up to the bound reached the fit tolerance.
   */
  PD_STATUS_RANK_NOT_FOUND = 6,
  /*
   Fewer coefficient-stage points than the minimum were requested.
   */
  PD_STATUS_INSUFFICIENT_POINTS = 7,
  /*
   The coefficient system could not be solved exactly.
   */
  PD_STATUS_RESIDUAL = 8,
  /*
   Another numerical failure.
   */
  PD_STATUS_NUMERICAL = 9,
  /*
   The instance generator could not satisfy the uniqueness condition.
   */
  PD_STATUS_GENERATOR_EXHAUSTED = 10,
  /*
   A Rust panic was caught at the boundary.
   */
  PD_STATUS_PANIC = 99,
} PdStatus;

/*
 Opaque decoupled model `W g(Vᵀ u)`.
 */
typedef struct PdModel PdModel;

/*
 Opaque pipeline report.
 */
typedef struct PdReport PdReport;

/*
 Opaque polynomial system.
 */
typedef struct PdSystem PdSystem;

/*
 Pipeline configuration. Obtain defaults from [`pd_options_default`].
 */
typedef struct PdOptions {
  /*
   Number of Jacobian-tensor points `N`.
   */
  size_t num_points_tensor;
  /*
   Number of coefficient-stage points `K`; 0 selects the minimum.
   */
  size_t num_points_coeff;
  /*
   Master seed for every random stage.
   */
  uint64_t seed;
  /*
   Random CPD restarts per tried rank.
   */
  size_t num_restarts;
  /*
   Iteration budget per CPD restart.
   */
  size_t max_iters;
  /*
   Relative CPD error accepted during the rank search.
   */
  double fit_tol;
  /*
   Non-zero draws points from a standard normal instead of U(-1, 1).
   */
  bool normal_points;
} PdOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message describing the last failure on this thread, or an empty string
 after a successful call. Valid until the next call into this library on
 the same thread; do not free.
 */
const char *pd_last_error_message(void);

/*
 Releases a string returned by this library. NULL is ignored.

 # Safety
 `s` must be NULL or a string returned by this library and not yet freed.
 */
void pd_string_free(char *s);

/*
 Default pipeline configuration.
 */
struct PdOptions pd_options_default(void);

/*
 Parses a polynomial system from its JSON form
 `{"num_vars": m, "polys": [[{"exps": [...], "coef": c}, ...], ...]}`.

 # Safety
 `json` must be a NUL-terminated string; `out` must be valid for writes.
 */
enum PdStatus pd_system_from_json(const char *json, struct PdSystem **out);

/*
 Serializes a system to JSON. Free the result with [`pd_string_free`].

 # Safety
 `sys` must be a live handle; `out` must be valid for writes.
 */
enum PdStatus pd_system_to_json(const struct PdSystem *sys, char **out);

/*
 Releases a system. NULL is ignored.

 # Safety
 `sys` must be NULL or a live handle that is not used afterwards.
 */
void pd_system_free(struct PdSystem *sys);

/*
 Number of input variables `m`, or 0 for NULL.

 # Safety
 `sys` must be NULL or a live handle.
 */
size_t pd_system_num_vars(const struct PdSystem *sys);

/*
 Number of outputs `n`, or 0 for NULL.

 # Safety
 `sys` must be NULL or a live handle.
 */
size_t pd_system_num_outputs(const struct PdSystem *sys);

/*
 Evaluates the system at `u` (length `m`) into `out` (length `n`).

 # Safety
 `sys` must be a live handle and the buffers valid for the given lengths.
 */
enum PdStatus pd_system_eval(const struct PdSystem *sys,
                             const double *u,
                             size_t u_len,
                             double *out,
                             size_t out_len);

/*
 Jacobian at `u` (length `m`) written row-major into `out` (length `n·m`).

 # Safety
 `sys` must be a live handle and the buffers valid for the given lengths.
 */
enum PdStatus pd_system_jacobian(const struct PdSystem *sys,
                                 const double *u,
                                 size_t u_len,
                                 double *out,
                                 size_t out_len);

/*
 Per-output relative coefficient distance `‖c − c̄‖/‖c̄‖` of `sys`
 against `reference`, written into `out` (length `n`).

 # Safety
 Both handles must be live and `out` valid for `out_len` doubles.
 */
enum PdStatus pd_coeff_distance(const struct PdSystem *sys,
                                const struct PdSystem *reference,
                                double *out,
                                size_t out_len);

/*
 Runs the full decoupling pipeline. `options` may be NULL for defaults.

 # Safety
 `sys` must be a live handle, `options` NULL or valid, `out` valid for
 writes.
 */
enum PdStatus pd_decouple(const struct PdSystem *sys,
                          const struct PdOptions *options,
                          struct PdReport **out);

/*
 Releases a report. NULL is ignored.

 # Safety
 `report` must be NULL or a live handle that is not used afterwards.
 */
void pd_report_free(struct PdReport *report);

/*
 Number of branches `r` found, or 0 for NULL.

 # Safety
 `report` must be NULL or a live handle.
 */
size_t pd_report_rank(const struct PdReport *report);

/*
 Number of coefficient-stage points `K` used, or 0 for NULL.

 # Safety
 `report` must be NULL or a live handle.
 */
size_t pd_report_num_coeff_points(const struct PdReport *report);

/*
 `dim null W` of the recovered model, or 0 for NULL.

 # Safety
 `report` must be NULL or a live handle.
 */
size_t pd_report_null_dimension(const struct PdReport *report);

/*
 Largest per-output relative coefficient error, or NaN for NULL.

 # Safety
 `report` must be NULL or a live handle.
 */
double pd_report_max_error(const struct PdReport *report);

/*
 Relative error of the accepted CP decomposition, or NaN for NULL.

 # Safety
 `report` must be NULL or a live handle.
 */
double pd_report_cpd_error(const struct PdReport *report);

/*
 Full report as JSON (same schema as the command-line tool).

 # Safety
 `report` must be a live handle; `out` must be valid for writes.
 */
enum PdStatus pd_report_to_json(const struct PdReport *report, char **out);

/*
 Copies the recovered model into a new handle.

 # Safety
 `report` must be a live handle; `out` must be valid for writes.
 */
enum PdStatus pd_report_model(const struct PdReport *report, struct PdModel **out);

/*
 Parses a model from `{"V": [[...]], "W": [[...]], "g": [[c0, c1, ...]]}`.

 # Safety
 `json` must be a NUL-terminated string; `out` must be valid for writes.
 */
enum PdStatus pd_model_from_json(const char *json, struct PdModel **out);

/*
 Serializes a model to JSON. Free the result with [`pd_string_free`].

 # Safety
 `model` must be a live handle; `out` must be valid for writes.
 */
enum PdStatus pd_model_to_json(const struct PdModel *model, char **out);

/*
 Releases a model. NULL is ignored.

 # Safety
 `model` must be NULL or a live handle that is not used afterwards.
 */
void pd_model_free(struct PdModel *model);

/*
 Number of branches, or 0 for NULL.

 # Safety
 `model` must be NULL or a live handle.
 */
size_t pd_model_num_branches(const struct PdModel *model);

/*
 Evaluates `W g(Vᵀ u)` at `u` (length `m`) into `out` (length `n`).

 # Safety
 `model` must be a live handle and the buffers valid for the given lengths.
 */
enum PdStatus pd_model_eval(const struct PdModel *model,
                            const double *u,
                            size_t u_len,
                            double *out,
                            size_t out_len);

/*
 Expands a model into the equivalent coupled polynomial system.

 # Safety
 `model` must be a live handle; `out` must be valid for writes.
 */
enum PdStatus pd_model_expand(const struct PdModel *model, struct PdSystem **out);

/*
 Draws a random decoupled instance with integer entries in
 `[-range, range]`, returning the coupled system and its ground truth.
 Either out-pointer may be NULL if that object is not wanted.

 # Safety
 Non-NULL out-pointers must be valid for writes.
 */
enum PdStatus pd_generate_instance(size_t m,
                                   size_t n,
                                   size_t r,
                                   size_t d,
                                   int64_t range,
                                   uint64_t seed,
                                   struct PdSystem **sys_out,
                                   struct PdModel **model_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POLYDECOUPLE_H */
