#ifndef OAVAT_H
#define OAVAT_H

/* Generated by build.rs; edit the Rust sources instead. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

#define OAVAT_OK 0

// A panic or other bug inside the library.
#define OAVAT_ERR_INTERNAL 1

// Bad argument, null pointer, wrong buffer length or bad config.
#define OAVAT_ERR_ARGUMENT 2

// File, JSON, CSV or checkpoint problems.
#define OAVAT_ERR_IO 3

#define OAVAT_ERR_GEOMETRY 4

#define OAVAT_ERR_DEGENERATE 5

#define OAVAT_ERR_SINGULAR 6

#define OAVAT_ERR_SAMPLING 7

#define OAVAT_ERR_NON_FINITE 8

#define OAVAT_ERR_EMPTY 9

// Confidence-aware Kalman filter over one bounding box.
typedef struct OavatFilter OavatFilter;

// A trained diffusion planner.
typedef struct OavatPlanner OavatPlanner;

// Batch averages; `car` is NaN when no step was outside the dead zone.
typedef struct OavatMetrics {
  double ar;
  double el;
  double sr;
  double car;
  uint64_t episodes;
} OavatMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *oavat_version(void);

// Copies the calling thread's last error message into `buf` (truncated,
// always NUL-terminated when `len > 0`). Returns the length the full
// message needs including the terminator.
//
// # Safety
// `buf` must be null or valid for `len` writable bytes.
size_t oavat_last_error(char *buf, size_t len);

// Measurement variance the filter assigns to a box of confidence `c`.
double oavat_confidence_noise(double c, double lambda, double gamma);

// Starts a filter at `bbox` (`[cx, cy, w, h]` in pixels).
//
// # Safety
// `bbox` must point to 4 doubles; `out` must be a valid pointer.
int32_t oavat_filter_new(const double *bbox,
                         double lambda,
                         double gamma,
                         double eta_c,
                         double process_noise,
                         struct OavatFilter **out);

// Advances one frame. Pass `z = NULL` when nothing was detected; otherwise
// `z` holds the measured box and `confidence` its score. Writes the
// filtered box to `out_box` and whether the measurement passed the
// confidence gate to `used` (may be null).
//
// # Safety
// `filter` must come from `oavat_filter_new`; `z` null or 4 doubles;
// `out_box` 4 writable doubles.
int32_t oavat_filter_step(struct OavatFilter *filter,
                          const double *z,
                          double confidence,
                          double *out_box,
                          bool *used);

// # Safety
// `filter` must be null or come from `oavat_filter_new`, and not be used
// afterwards.
void oavat_filter_free(struct OavatFilter *filter);

// Loads a planner checkpoint written by `oavat train`.
//
// # Safety
// `path` must be a NUL-terminated string; `out` a valid pointer.
int32_t oavat_planner_load(const char *path, struct OavatPlanner **out);

// Length of the condition vector: occupancy crop then normalised box.
//
// # Safety
// `planner` must come from `oavat_planner_load`.
size_t oavat_planner_condition_len(const struct OavatPlanner *planner);

// Number of values in a sampled trajectory (`2 * horizon`).
//
// # Safety
// `planner` must come from `oavat_planner_load`.
size_t oavat_planner_trajectory_len(const struct OavatPlanner *planner);

// Samples one trajectory as interleaved `x0, y0, x1, y1, ...` in the unit
// box of the tracker frame.
//
// # Safety
// `cond` must hold `cond_len` doubles and `out` `out_len` writable doubles.
int32_t oavat_planner_sample(const struct OavatPlanner *planner,
                             const double *cond,
                             size_t cond_len,
                             uint64_t seed,
                             double *out,
                             size_t out_len);

// # Safety
// `planner` must be null or come from `oavat_planner_load`, and not be
// used afterwards.
void oavat_planner_free(struct OavatPlanner *planner);

// Runs `episodes` seeded episodes of `variant` on scenario `preset` with
// the default agent configuration. `planner` may be null only for the
// `no_planner_pid` variant. Same arguments, same result.
//
// # Safety
// String arguments must be NUL-terminated; `out` a valid pointer.
int32_t oavat_evaluate(const char *preset,
                       const char *variant,
                       const struct OavatPlanner *planner,
                       uint64_t episodes,
                       uint64_t max_steps,
                       uint64_t seed,
                       struct OavatMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OAVAT_H */
