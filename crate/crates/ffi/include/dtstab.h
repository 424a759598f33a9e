#ifndef DTSTAB_H
#define DTSTAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DtsStatus {
  DTS_STATUS_OK = 0,
  /**
   * A checked property does not hold; the report is still returned.
   */
  DTS_STATUS_CHECK_FAILED = 1,
  DTS_STATUS_NULL_POINTER = 2,
  DTS_STATUS_INVALID_UTF8 = 3,
  DTS_STATUS_PARSE = 4,
  DTS_STATUS_DIMENSION = 5,
  DTS_STATUS_DOMAIN = 6,
  DTS_STATUS_INVALID = 7,
  DTS_STATUS_UNKNOWN_EXAMPLE = 8,
  DTS_STATUS_UNBOUNDED = 9,
  DTS_STATUS_IO = 10,
  DTS_STATUS_PANIC = 11,
} DtsStatus;

/**
 * A parsed expression together with the dimensions it was parsed under.
 */
typedef struct DtsExpr DtsExpr;

typedef struct DtsSystem DtsSystem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null after a success.
 * The caller owns the copy and frees it with [`dts_string_free`].
 */
char *dts_last_error(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, freed at most once.
 */
void dts_string_free(char *s);

/**
 * Parses `text` over `t`, `x1..xn`, `d1..dm` and `u1..uk`.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a writable pointer.
 */
enum DtsStatus dts_expr_parse(const char *text, size_t n, size_t m, size_t k, struct DtsExpr **out);

/**
 * Evaluates at `(t, x, d, u)`; the arrays hold exactly the parse-time
 * dimensions.
 *
 * # Safety
 * `expr` must come from [`dts_expr_parse`]; the arrays must hold `n`, `m`
 * and `k` doubles; `out` must be writable.
 */
enum DtsStatus dts_expr_eval(const struct DtsExpr *expr,
                             double t,
                             const double *x,
                             const double *d,
                             const double *u,
                             double *out);

/**
 * Canonical text of the expression, owned by the caller.
 *
 * # Safety
 * `expr` must come from [`dts_expr_parse`]; `out` must be writable.
 */
enum DtsStatus dts_expr_to_string(const struct DtsExpr *expr, char **out);

/**
 * # Safety
 * `expr` must be null or a handle from [`dts_expr_parse`], freed at most once.
 */
void dts_expr_free(struct DtsExpr *expr);

/**
 * Builds a system from the JSON system-file layout.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a writable pointer.
 */
enum DtsStatus dts_system_from_json(const char *json, struct DtsSystem **out);

/**
 * A registry system by name. `r` selects the disturbance bound of
 * `example_4_7` and must be NaN for the other examples (NaN there means the
 * default). With `closed_loop` nonzero, `example_4_7` returns the plant
 * closed with its state feedback.
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` a writable pointer.
 */
enum DtsStatus dts_system_example(const char *name,
                                  double r,
                                  int32_t closed_loop,
                                  struct DtsSystem **out);

/**
 * Writes the state, disturbance and input dimensions.
 *
 * # Safety
 * `sys` must be a live handle; the outputs must be writable.
 */
enum DtsStatus dts_system_dims(const struct DtsSystem *sys, size_t *n, size_t *m, size_t *k);

/**
 * One step `x_next = f(t, x, d, u)`. `d` must lie in the disturbance box.
 *
 * # Safety
 * `sys` must be a live handle; `x` and `x_next` hold `n` doubles, `d` holds
 * `m` and `u` holds `k`.
 */
enum DtsStatus dts_system_step(const struct DtsSystem *sys,
                               uint64_t t,
                               const double *x,
                               const double *d,
                               const double *u,
                               double *x_next);

/**
 * Simulates `horizon` steps with zero input and returns the trajectory as
 * CSV. A non-null `d` holds a constant disturbance of `m` values; a null
 * `d` draws uniform disturbances from `seed`.
 *
 * # Safety
 * `sys` must be a live handle, `x0` holds `n` doubles, `d` is null or holds
 * `m` doubles, and `out_csv` must be writable.
 */
enum DtsStatus dts_simulate_csv(const struct DtsSystem *sys,
                                uint64_t t0,
                                const double *x0,
                                const double *d,
                                uint64_t seed,
                                size_t horizon,
                                char **out_csv);

/**
 * # Safety
 * `sys` must be null or a handle from this library, freed at most once.
 */
void dts_system_free(struct DtsSystem *sys);

/**
 * Runs a command-line invocation (without the program name) and returns its
 * JSON report. `DTS_CHECK_FAILED` means the command ran and its check did
 * not pass; the report is still written.
 *
 * # Safety
 * `argv` must point to `argc` NUL-terminated strings; `out_json` must be
 * writable.
 */
enum DtsStatus dts_run(const char *const *argv, size_t argc, char **out_json);

/**
 * Certifies one of the registry examples, e.g. `("example_2_3",
 * "relaxed-decrease")`, and returns the JSON certificate report.
 *
 * # Safety
 * `name` and `check` must be NUL-terminated strings; `out_json` must be
 * writable.
 */
enum DtsStatus dts_example_certify_json(const char *name, const char *check, char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DTSTAB_H */
