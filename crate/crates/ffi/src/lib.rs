//! C ABI for the tracking pipeline.
//!
//! Objects cross the boundary as opaque pointers created by `*_new` or
//! `*_load` and released with the matching `*_free`. Fallible calls return
//! an `int32_t` status: `OAVAT_OK` or one of the `OAVAT_ERR_*` classes, with
//! a message retrievable through `oavat_last_error` on the same thread.
//! Panics never unwind into C; they surface as `OAVAT_ERR_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use oavat::agent::{AgentConfig, PlannerHandle, Variant};
use oavat::cli::{episode_seeds, eval_variant};
use oavat::estimator::{self, KfConfig, KfState, Measurement};
use oavat::planner::{sample_plan, Checkpoint};
use oavat::sim::{compute_metrics, EpisodeConfig, ScenarioConfig};
use oavat::Error;

pub const OAVAT_OK: i32 = 0;
/// A panic or other bug inside the library.
pub const OAVAT_ERR_INTERNAL: i32 = 1;
/// Bad argument, null pointer, wrong buffer length or bad config.
pub const OAVAT_ERR_ARGUMENT: i32 = 2;
/// File, JSON, CSV or checkpoint problems.
pub const OAVAT_ERR_IO: i32 = 3;
pub const OAVAT_ERR_GEOMETRY: i32 = 4;
pub const OAVAT_ERR_DEGENERATE: i32 = 5;
pub const OAVAT_ERR_SINGULAR: i32 = 6;
pub const OAVAT_ERR_SAMPLING: i32 = 7;
pub const OAVAT_ERR_NON_FINITE: i32 = 8;
pub const OAVAT_ERR_EMPTY: i32 = 9;

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn fail(e: Error) -> i32 {
    let code = e.code();
    set_error(e.to_string());
    code
}

fn arg_error(msg: &str) -> i32 {
    set_error(msg.to_string());
    OAVAT_ERR_ARGUMENT
}

/// Runs `f`, turning a panic into `OAVAT_ERR_INTERNAL`.
fn guard(f: impl FnOnce() -> i32) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(code) => code,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            OAVAT_ERR_INTERNAL
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, i32> {
    if p.is_null() {
        return Err(arg_error(&format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| arg_error(&format!("{what} is not UTF-8")))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn oavat_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `len > 0`). Returns the length the full
/// message needs including the terminator.
///
/// # Safety
/// `buf` must be null or valid for `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn oavat_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len() + 1
    })
}

/// Measurement variance the filter assigns to a box of confidence `c`.
#[no_mangle]
pub extern "C" fn oavat_confidence_noise(c: f64, lambda: f64, gamma: f64) -> f64 {
    estimator::confidence_noise(c, lambda, gamma)
}

/// Confidence-aware Kalman filter over one bounding box.
pub struct OavatFilter {
    state: KfState,
    config: KfConfig,
}

/// Starts a filter at `bbox` (`[cx, cy, w, h]` in pixels).
///
/// # Safety
/// `bbox` must point to 4 doubles; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn oavat_filter_new(
    bbox: *const f64,
    lambda: f64,
    gamma: f64,
    eta_c: f64,
    process_noise: f64,
    out: *mut *mut OavatFilter,
) -> i32 {
    guard(|| {
        if bbox.is_null() || out.is_null() {
            return arg_error("null pointer");
        }
        let b = std::slice::from_raw_parts(bbox, 4);
        let filter = OavatFilter {
            state: KfState::from_box([b[0], b[1], b[2], b[3]]),
            config: KfConfig::new(lambda, gamma, eta_c, process_noise),
        };
        *out = Box::into_raw(Box::new(filter));
        OAVAT_OK
    })
}

/// Advances one frame. Pass `z = NULL` when nothing was detected; otherwise
/// `z` holds the measured box and `confidence` its score. Writes the
/// filtered box to `out_box` and whether the measurement passed the
/// confidence gate to `used` (may be null).
///
/// # Safety
/// `filter` must come from `oavat_filter_new`; `z` null or 4 doubles;
/// `out_box` 4 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn oavat_filter_step(
    filter: *mut OavatFilter,
    z: *const f64,
    confidence: f64,
    out_box: *mut f64,
    used: *mut bool,
) -> i32 {
    guard(|| {
        if filter.is_null() || out_box.is_null() {
            return arg_error("null pointer");
        }
        let f = &mut *filter;
        let meas = (!z.is_null()).then(|| {
            let z = std::slice::from_raw_parts(z, 4);
            Measurement {
                z: [z[0], z[1], z[2], z[3]],
                confidence,
            }
        });
        match estimator::step(&f.state, meas.as_ref(), &f.config) {
            Ok(o) => {
                f.state = o.state;
                std::slice::from_raw_parts_mut(out_box, 4).copy_from_slice(&o.predicted_box);
                if !used.is_null() {
                    *used = o.measurement_used;
                }
                OAVAT_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `filter` must be null or come from `oavat_filter_new`, and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn oavat_filter_free(filter: *mut OavatFilter) {
    if !filter.is_null() {
        drop(Box::from_raw(filter));
    }
}

/// A trained diffusion planner.
pub struct OavatPlanner {
    handle: Arc<PlannerHandle>,
}

/// Loads a planner checkpoint written by `oavat train`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn oavat_planner_load(path: *const c_char, out: *mut *mut OavatPlanner) -> i32 {
    guard(|| {
        if out.is_null() {
            return arg_error("null pointer");
        }
        let path = match str_arg(path, "path") {
            Ok(p) => p,
            Err(code) => return code,
        };
        match Checkpoint::load(Path::new(path)).and_then(PlannerHandle::new) {
            Ok(h) => {
                *out = Box::into_raw(Box::new(OavatPlanner { handle: Arc::new(h) }));
                OAVAT_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// Length of the condition vector: occupancy crop then normalised box.
///
/// # Safety
/// `planner` must come from `oavat_planner_load`.
#[no_mangle]
pub unsafe extern "C" fn oavat_planner_condition_len(planner: *const OavatPlanner) -> usize {
    planner.as_ref().map_or(0, |p| p.handle.checkpoint.model.config.cond_dim)
}

/// Number of values in a sampled trajectory (`2 * horizon`).
///
/// # Safety
/// `planner` must come from `oavat_planner_load`.
#[no_mangle]
pub unsafe extern "C" fn oavat_planner_trajectory_len(planner: *const OavatPlanner) -> usize {
    planner.as_ref().map_or(0, |p| p.handle.checkpoint.model.config.traj_dim)
}

/// Samples one trajectory as interleaved `x0, y0, x1, y1, ...` in the unit
/// box of the tracker frame.
///
/// # Safety
/// `cond` must hold `cond_len` doubles and `out` `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn oavat_planner_sample(
    planner: *const OavatPlanner,
    cond: *const f64,
    cond_len: usize,
    seed: u64,
    out: *mut f64,
    out_len: usize,
) -> i32 {
    guard(|| {
        let Some(p) = planner.as_ref() else {
            return arg_error("null planner");
        };
        if cond.is_null() || out.is_null() {
            return arg_error("null pointer");
        }
        let model = &p.handle.checkpoint.model;
        if cond_len != model.config.cond_dim || out_len != model.config.traj_dim {
            return arg_error(&format!(
                "expected condition length {} and output length {}",
                model.config.cond_dim, model.config.traj_dim
            ));
        }
        let c = std::slice::from_raw_parts(cond, cond_len);
        match sample_plan(model, c, out_len, &p.handle.schedule, seed) {
            Ok(traj) => {
                std::slice::from_raw_parts_mut(out, out_len).copy_from_slice(&traj);
                OAVAT_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `planner` must be null or come from `oavat_planner_load`, and not be
/// used afterwards.
#[no_mangle]
pub unsafe extern "C" fn oavat_planner_free(planner: *mut OavatPlanner) {
    if !planner.is_null() {
        drop(Box::from_raw(planner));
    }
}

/// Batch averages; `car` is NaN when no step was outside the dead zone.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct OavatMetrics {
    pub ar: f64,
    pub el: f64,
    pub sr: f64,
    pub car: f64,
    pub episodes: u64,
}

/// Runs `episodes` seeded episodes of `variant` on scenario `preset` with
/// the default agent configuration. `planner` may be null only for the
/// `no_planner_pid` variant. Same arguments, same result.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn oavat_evaluate(
    preset: *const c_char,
    variant: *const c_char,
    planner: *const OavatPlanner,
    episodes: u64,
    max_steps: u64,
    seed: u64,
    out: *mut OavatMetrics,
) -> i32 {
    guard(|| {
        if out.is_null() {
            return arg_error("null pointer");
        }
        let (preset, variant) = match (str_arg(preset, "preset"), str_arg(variant, "variant")) {
            (Ok(p), Ok(v)) => (p, v),
            (Err(c), _) | (_, Err(c)) => return c,
        };
        let result = (|| {
            let variant: Variant = variant.parse()?;
            let scenario = ScenarioConfig::preset(preset)?;
            let episode = EpisodeConfig {
                max_steps: max_steps as usize,
                ..EpisodeConfig::default()
            };
            let seeds = episode_seeds(seed, episodes as usize);
            let handle = planner.as_ref().map(|p| p.handle.clone());
            let logs = eval_variant(variant, AgentConfig::default(), handle, &scenario, &episode, &seeds)?;
            compute_metrics(&logs, episode.max_steps, &scenario.name, seed)
        })();
        match result {
            Ok(m) => {
                *out = OavatMetrics {
                    ar: m.ar,
                    el: m.el,
                    sr: m.sr,
                    car: m.car.unwrap_or(f64::NAN),
                    episodes: m.episodes as u64,
                };
                OAVAT_OK
            }
            Err(e) => fail(e),
        }
    })
}
