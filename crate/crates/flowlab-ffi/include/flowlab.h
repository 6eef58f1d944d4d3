/* C interface to the flowlab fund-flow impact analytics library. */

#ifndef FLOWLAB_H
#define FLOWLAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

#define FLOWLAB_OK 0

/**
 * Requested item does not exist (not an error; outputs untouched).
 */
#define FLOWLAB_NOT_FOUND 1

/**
 * Invalid input: bad arguments, malformed data, config violations.
 */
#define FLOWLAB_ERR_INVALID 2

/**
 * Estimation failure: rank deficiency, no convergence.
 */
#define FLOWLAB_ERR_ESTIMATION 3

/**
 * I/O failure.
 */
#define FLOWLAB_ERR_IO 4

/**
 * Internal fault caught at the FFI boundary.
 */
#define FLOWLAB_ERR_PANIC 5

/**
 * A required pointer argument was null.
 */
#define FLOWLAB_ERR_NULL 6

/**
 * Opaque set of per-fund-day illiquidity measures.
 */
typedef struct FlowlabMeasures FlowlabMeasures;

/**
 * Opaque market panel: aligned security, fund, and holdings series.
 */
typedef struct FlowlabPanel FlowlabPanel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the calling thread's most recent failure, or an empty
 * string. The pointer stays valid until this thread's next flowlab call.
 *
 * # Safety
 * The returned pointer must not be freed and must not be used after the
 * calling thread makes another flowlab call.
 */
const char *flowlab_last_error(void);

/**
 * Load a panel from a directory holding `securities.csv`, `funds.csv`,
 * and `holdings.csv`. On success writes a new handle to `out`.
 *
 * # Safety
 * `dir` must be a valid NUL-terminated string; `out` must be a valid
 * pointer to pointer storage. The handle must be released with
 * [`flowlab_panel_free`].
 */
int32_t flowlab_panel_load(const char *dir, struct FlowlabPanel **out);

/**
 * Generate a synthetic panel from simulation config text (the same
 * line-oriented `key = value` format the CLI accepts). On success writes
 * a new handle to `out`.
 *
 * # Safety
 * `config_text` must be a valid NUL-terminated string; `out` must be a
 * valid pointer to pointer storage. The handle must be released with
 * [`flowlab_panel_free`].
 */
int32_t flowlab_panel_simulate(const char *config_text, struct FlowlabPanel **out);

/**
 * Write a panel's three CSVs into a directory (created if absent).
 *
 * # Safety
 * `panel` must be a live handle from this library; `dir` must be a valid
 * NUL-terminated string.
 */
int32_t flowlab_panel_write_csv(const struct FlowlabPanel *panel, const char *dir);

/**
 * Number of trading days, or -1 for a null handle.
 *
 * # Safety
 * `panel` must be null or a live handle from this library.
 */
int64_t flowlab_panel_n_days(const struct FlowlabPanel *panel);

/**
 * Number of funds, or -1 for a null handle.
 *
 * # Safety
 * `panel` must be null or a live handle from this library.
 */
int64_t flowlab_panel_n_funds(const struct FlowlabPanel *panel);

/**
 * Number of securities, or -1 for a null handle.
 *
 * # Safety
 * `panel` must be null or a live handle from this library.
 */
int64_t flowlab_panel_n_securities(const struct FlowlabPanel *panel);

/**
 * Release a panel handle. Null is a no-op.
 *
 * # Safety
 * `panel` must be null or a handle from this library not freed before.
 */
void flowlab_panel_free(struct FlowlabPanel *panel);

/**
 * Compute per-fund-day illiquidity measures with curvature `eta`
 * (0 < eta <= 1). On success writes a new handle to `out`.
 *
 * # Safety
 * `panel` must be a live handle from this library; `out` must be a valid
 * pointer to pointer storage. The handle must be released with
 * [`flowlab_measures_free`].
 */
int32_t flowlab_measures_compute(const struct FlowlabPanel *panel,
                                 double eta,
                                 struct FlowlabMeasures **out);

/**
 * Number of fund-day measure rows, or -1 for a null handle.
 *
 * # Safety
 * `measures` must be null or a live handle from this library.
 */
int64_t flowlab_measures_len(const struct FlowlabMeasures *measures);

/**
 * Fetch the canonical illiquidity, concentration, and size for one
 * (fund index, day index). Returns `FLOWLAB_OK` and fills the non-null
 * output pointers, or `FLOWLAB_NOT_FOUND` when that fund-day has no
 * measures (outputs untouched).
 *
 * # Safety
 * `measures` must be a live handle from this library; each output must be
 * null or valid storage for one double.
 */
int32_t flowlab_measures_get(const struct FlowlabMeasures *measures,
                             uint32_t fund,
                             uint32_t day,
                             double *out_illiq,
                             double *out_conc,
                             double *out_size);

/**
 * Release a measures handle. Null is a no-op.
 *
 * # Safety
 * `measures` must be null or a handle from this library not freed before.
 */
void flowlab_measures_free(struct FlowlabMeasures *measures);

/**
 * Self-inflated fund return theta * sign(f)|f|^eta * fund_illiq.
 * Pure function of its arguments; NaN propagates.
 */
double flowlab_self_inflated_return(double flow_rel, double fund_illiq, double theta, double eta);

/**
 * Library version as a static NUL-terminated string.
 *
 * # Safety
 * The returned pointer is static; do not free it.
 */
const char *flowlab_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FLOWLAB_H */
