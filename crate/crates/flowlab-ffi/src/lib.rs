//! C ABI for the flowlab library.
//!
//! Conventions:
//! - Handles (`FlowlabPanel`, `FlowlabMeasures`) are opaque pointers owned
//!   by this library; release them with the matching `_free` function.
//! - Fallible functions return an `int32_t` status: `FLOWLAB_OK` on
//!   success, otherwise an error class mirroring the CLI exit codes
//!   (2 invalid input, 3 estimation failure, 4 I/O failure) plus
//!   `FLOWLAB_ERR_NULL` for null arguments and `FLOWLAB_ERR_PANIC` for an
//!   internal fault caught at the boundary.
//! - After a failure, `flowlab_last_error` returns a message for the
//!   calling thread, valid until that thread's next flowlab call.
//! - All pointers must be non-null unless documented otherwise; strings
//!   are NUL-terminated UTF-8.

use flowlab::illiquidity::{IlliqParams, MeasuresSet};
use flowlab::impact::ImpactParams;
use flowlab::panel::MarketPanel;
use flowlab::sim::SimConfig;
use libc::c_char;
use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

// ============================================================
// Status codes
// ============================================================

pub const FLOWLAB_OK: i32 = 0;
/// Requested item does not exist (not an error; outputs untouched).
pub const FLOWLAB_NOT_FOUND: i32 = 1;
/// Invalid input: bad arguments, malformed data, config violations.
pub const FLOWLAB_ERR_INVALID: i32 = 2;
/// Estimation failure: rank deficiency, no convergence.
pub const FLOWLAB_ERR_ESTIMATION: i32 = 3;
/// I/O failure.
pub const FLOWLAB_ERR_IO: i32 = 4;
/// Internal fault caught at the FFI boundary.
pub const FLOWLAB_ERR_PANIC: i32 = 5;
/// A required pointer argument was null.
pub const FLOWLAB_ERR_NULL: i32 = 6;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn clear_last_error() {
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = CString::default();
    });
}

fn status_of(err: &flowlab::Error) -> i32 {
    set_last_error(&err.to_string());
    err.exit_code()
}

/// Run `body` with a panic guard; a panic sets the last error and returns
/// `FLOWLAB_ERR_PANIC`.
fn guarded(body: impl FnOnce() -> i32) -> i32 {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(code) => code,
        Err(_) => {
            set_last_error("internal fault (panic caught at the FFI boundary)");
            FLOWLAB_ERR_PANIC
        }
    }
}

/// # Safety
/// `s` must be null or a valid NUL-terminated string.
unsafe fn utf8_arg<'a>(s: *const c_char, name: &str) -> Result<&'a str, i32> {
    if s.is_null() {
        set_last_error(&format!("{name} must not be null"));
        return Err(FLOWLAB_ERR_NULL);
    }
    match CStr::from_ptr(s).to_str() {
        Ok(v) => Ok(v),
        Err(_) => {
            set_last_error(&format!("{name} must be valid UTF-8"));
            Err(FLOWLAB_ERR_INVALID)
        }
    }
}

// ============================================================
// Opaque handles
// ============================================================

/// Opaque market panel: aligned security, fund, and holdings series.
pub struct FlowlabPanel {
    panel: MarketPanel,
}

/// Opaque set of per-fund-day illiquidity measures.
pub struct FlowlabMeasures {
    measures: MeasuresSet,
}

// ============================================================
// Error reporting
// ============================================================

/// Message for the calling thread's most recent failure, or an empty
/// string. The pointer stays valid until this thread's next flowlab call.
///
/// # Safety
/// The returned pointer must not be freed and must not be used after the
/// calling thread makes another flowlab call.
#[no_mangle]
pub unsafe extern "C" fn flowlab_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

// ============================================================
// Panel lifecycle
// ============================================================

/// Load a panel from a directory holding `securities.csv`, `funds.csv`,
/// and `holdings.csv`. On success writes a new handle to `out`.
///
/// # Safety
/// `dir` must be a valid NUL-terminated string; `out` must be a valid
/// pointer to pointer storage. The handle must be released with
/// [`flowlab_panel_free`].
#[no_mangle]
pub unsafe extern "C" fn flowlab_panel_load(
    dir: *const c_char,
    out: *mut *mut FlowlabPanel,
) -> i32 {
    guarded(|| {
        if out.is_null() {
            set_last_error("out must not be null");
            return FLOWLAB_ERR_NULL;
        }
        let dir = match utf8_arg(dir, "dir") {
            Ok(v) => v,
            Err(code) => return code,
        };
        match flowlab::io::load_panel(Path::new(dir)) {
            Ok(panel) => {
                clear_last_error();
                *out = Box::into_raw(Box::new(FlowlabPanel { panel }));
                FLOWLAB_OK
            }
            Err(e) => status_of(&e),
        }
    })
}

/// Generate a synthetic panel from simulation config text (the same
/// line-oriented `key = value` format the CLI accepts). On success writes
/// a new handle to `out`.
///
/// # Safety
/// `config_text` must be a valid NUL-terminated string; `out` must be a
/// valid pointer to pointer storage. The handle must be released with
/// [`flowlab_panel_free`].
#[no_mangle]
pub unsafe extern "C" fn flowlab_panel_simulate(
    config_text: *const c_char,
    out: *mut *mut FlowlabPanel,
) -> i32 {
    guarded(|| {
        if out.is_null() {
            set_last_error("out must not be null");
            return FLOWLAB_ERR_NULL;
        }
        let text = match utf8_arg(config_text, "config_text") {
            Ok(v) => v,
            Err(code) => return code,
        };
        let result = SimConfig::parse(text).and_then(|cfg| flowlab::sim::generate(&cfg));
        match result {
            Ok((panel, _truth)) => {
                clear_last_error();
                *out = Box::into_raw(Box::new(FlowlabPanel { panel }));
                FLOWLAB_OK
            }
            Err(e) => status_of(&e),
        }
    })
}

/// Write a panel's three CSVs into a directory (created if absent).
///
/// # Safety
/// `panel` must be a live handle from this library; `dir` must be a valid
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn flowlab_panel_write_csv(
    panel: *const FlowlabPanel,
    dir: *const c_char,
) -> i32 {
    guarded(|| {
        let Some(handle) = panel.as_ref() else {
            set_last_error("panel must not be null");
            return FLOWLAB_ERR_NULL;
        };
        let dir = match utf8_arg(dir, "dir") {
            Ok(v) => v,
            Err(code) => return code,
        };
        match flowlab::io::write_panel_dir(Path::new(dir), &handle.panel) {
            Ok(()) => {
                clear_last_error();
                FLOWLAB_OK
            }
            Err(e) => status_of(&e),
        }
    })
}

/// Number of trading days, or -1 for a null handle.
///
/// # Safety
/// `panel` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn flowlab_panel_n_days(panel: *const FlowlabPanel) -> i64 {
    match panel.as_ref() {
        Some(h) => h.panel.n_days() as i64,
        None => -1,
    }
}

/// Number of funds, or -1 for a null handle.
///
/// # Safety
/// `panel` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn flowlab_panel_n_funds(panel: *const FlowlabPanel) -> i64 {
    match panel.as_ref() {
        Some(h) => h.panel.n_funds() as i64,
        None => -1,
    }
}

/// Number of securities, or -1 for a null handle.
///
/// # Safety
/// `panel` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn flowlab_panel_n_securities(panel: *const FlowlabPanel) -> i64 {
    match panel.as_ref() {
        Some(h) => h.panel.n_securities() as i64,
        None => -1,
    }
}

/// Release a panel handle. Null is a no-op.
///
/// # Safety
/// `panel` must be null or a handle from this library not freed before.
#[no_mangle]
pub unsafe extern "C" fn flowlab_panel_free(panel: *mut FlowlabPanel) {
    if !panel.is_null() {
        drop(Box::from_raw(panel));
    }
}

// ============================================================
// Illiquidity measures
// ============================================================

/// Compute per-fund-day illiquidity measures with curvature `eta`
/// (0 < eta <= 1). On success writes a new handle to `out`.
///
/// # Safety
/// `panel` must be a live handle from this library; `out` must be a valid
/// pointer to pointer storage. The handle must be released with
/// [`flowlab_measures_free`].
#[no_mangle]
pub unsafe extern "C" fn flowlab_measures_compute(
    panel: *const FlowlabPanel,
    eta: f64,
    out: *mut *mut FlowlabMeasures,
) -> i32 {
    guarded(|| {
        if out.is_null() {
            set_last_error("out must not be null");
            return FLOWLAB_ERR_NULL;
        }
        let Some(handle) = panel.as_ref() else {
            set_last_error("panel must not be null");
            return FLOWLAB_ERR_NULL;
        };
        if !(eta > 0.0 && eta <= 1.0) {
            set_last_error(&format!("eta must lie in (0, 1], got {eta}"));
            return FLOWLAB_ERR_INVALID;
        }
        match MeasuresSet::compute(&handle.panel, IlliqParams::with_eta(eta)) {
            Ok((measures, _diags)) => {
                clear_last_error();
                *out = Box::into_raw(Box::new(FlowlabMeasures { measures }));
                FLOWLAB_OK
            }
            Err(e) => status_of(&e),
        }
    })
}

/// Number of fund-day measure rows, or -1 for a null handle.
///
/// # Safety
/// `measures` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn flowlab_measures_len(measures: *const FlowlabMeasures) -> i64 {
    match measures.as_ref() {
        Some(h) => h.measures.rows.len() as i64,
        None => -1,
    }
}

/// Fetch the canonical illiquidity, concentration, and size for one
/// (fund index, day index). Returns `FLOWLAB_OK` and fills the non-null
/// output pointers, or `FLOWLAB_NOT_FOUND` when that fund-day has no
/// measures (outputs untouched).
///
/// # Safety
/// `measures` must be a live handle from this library; each output must be
/// null or valid storage for one double.
#[no_mangle]
pub unsafe extern "C" fn flowlab_measures_get(
    measures: *const FlowlabMeasures,
    fund: u32,
    day: u32,
    out_illiq: *mut f64,
    out_conc: *mut f64,
    out_size: *mut f64,
) -> i32 {
    guarded(|| {
        let Some(handle) = measures.as_ref() else {
            set_last_error("measures must not be null");
            return FLOWLAB_ERR_NULL;
        };
        match handle.measures.get(fund, day) {
            Some(m) => {
                if !out_illiq.is_null() {
                    *out_illiq = m.illiq;
                }
                if !out_conc.is_null() {
                    *out_conc = m.conc;
                }
                if !out_size.is_null() {
                    *out_size = m.size;
                }
                clear_last_error();
                FLOWLAB_OK
            }
            None => FLOWLAB_NOT_FOUND,
        }
    })
}

/// Release a measures handle. Null is a no-op.
///
/// # Safety
/// `measures` must be null or a handle from this library not freed before.
#[no_mangle]
pub unsafe extern "C" fn flowlab_measures_free(measures: *mut FlowlabMeasures) {
    if !measures.is_null() {
        drop(Box::from_raw(measures));
    }
}

// ============================================================
// Scalar laws
// ============================================================

/// Self-inflated fund return theta * sign(f)|f|^eta * fund_illiq.
/// Pure function of its arguments; NaN propagates.
#[no_mangle]
pub extern "C" fn flowlab_self_inflated_return(
    flow_rel: f64,
    fund_illiq: f64,
    theta: f64,
    eta: f64,
) -> f64 {
    flowlab::impact::self_inflated_return(
        flow_rel,
        fund_illiq,
        &ImpactParams::contemporaneous(theta, eta),
    )
}

/// Library version as a static NUL-terminated string.
///
/// # Safety
/// The returned pointer is static; do not free it.
#[no_mangle]
pub unsafe extern "C" fn flowlab_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

// Not part of the C surface; keeps the header test honest.
#[doc(hidden)]
pub fn _header_path() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("include")
        .join("flowlab.h")
}

// ============================================================
// Tests
// ============================================================

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    const CONFIG: &str =
        "funds = 20\nsecurities = 15\ndays = 140\nseed = 11\nholdings_min = 3\nholdings_max = 9\n";

    #[test]
    fn simulate_measure_and_free() {
        let cfg = CString::new(CONFIG).unwrap();
        let mut panel: *mut FlowlabPanel = ptr::null_mut();
        let code = unsafe { flowlab_panel_simulate(cfg.as_ptr(), &mut panel) };
        assert_eq!(code, FLOWLAB_OK);
        assert!(!panel.is_null());
        unsafe {
            assert_eq!(flowlab_panel_n_funds(panel), 20);
            assert_eq!(flowlab_panel_n_securities(panel), 15);
            assert_eq!(flowlab_panel_n_days(panel), 140);
        }

        let mut measures: *mut FlowlabMeasures = ptr::null_mut();
        let code = unsafe { flowlab_measures_compute(panel, 0.5, &mut measures) };
        assert_eq!(code, FLOWLAB_OK);
        let n = unsafe { flowlab_measures_len(measures) };
        assert!(n > 0, "expected some measure rows, got {n}");

        // Identity through the C surface: illiq == conc * size.
        let mut found = false;
        'outer: for fund in 0..20u32 {
            for day in 0..140u32 {
                let (mut i, mut c, mut s) = (0.0f64, 0.0f64, 0.0f64);
                let code = unsafe {
                    flowlab_measures_get(measures, fund, day, &mut i, &mut c, &mut s)
                };
                if code == FLOWLAB_OK {
                    assert!((i - c * s).abs() <= 1e-12 * i.abs().max(1.0));
                    found = true;
                    break 'outer;
                }
                assert_eq!(code, FLOWLAB_NOT_FOUND);
            }
        }
        assert!(found);

        unsafe {
            flowlab_measures_free(measures);
            flowlab_panel_free(panel);
        }
    }

    #[test]
    fn bad_config_reports_error() {
        let cfg = CString::new("funds = -3\n").unwrap();
        let mut panel: *mut FlowlabPanel = ptr::null_mut();
        let code = unsafe { flowlab_panel_simulate(cfg.as_ptr(), &mut panel) };
        assert_eq!(code, FLOWLAB_ERR_INVALID);
        assert!(panel.is_null());
        let msg = unsafe { CStr::from_ptr(flowlab_last_error()) };
        assert!(!msg.to_bytes().is_empty());
    }

    #[test]
    fn null_arguments_are_rejected() {
        let mut panel: *mut FlowlabPanel = ptr::null_mut();
        assert_eq!(
            unsafe { flowlab_panel_simulate(ptr::null(), &mut panel) },
            FLOWLAB_ERR_NULL
        );
        assert_eq!(
            unsafe { flowlab_panel_load(ptr::null(), &mut panel) },
            FLOWLAB_ERR_NULL
        );
        assert_eq!(unsafe { flowlab_panel_n_days(ptr::null()) }, -1);
        unsafe { flowlab_panel_free(ptr::null_mut()) };
        unsafe { flowlab_measures_free(ptr::null_mut()) };
    }

    #[test]
    fn load_failure_maps_to_io_code() {
        let dir = CString::new("/nonexistent-flowlab-ffi-dir").unwrap();
        let mut panel: *mut FlowlabPanel = ptr::null_mut();
        let code = unsafe { flowlab_panel_load(dir.as_ptr(), &mut panel) };
        assert_eq!(code, FLOWLAB_ERR_IO);
    }

    #[test]
    fn scalar_law_matches_library() {
        let via_ffi = flowlab_self_inflated_return(0.04, 2.5, 0.78, 0.5);
        let direct = flowlab::impact::self_inflated_return(
            0.04,
            2.5,
            &ImpactParams::contemporaneous(0.78, 0.5),
        );
        assert_eq!(via_ffi, direct);
    }

    #[test]
    fn header_is_generated() {
        let header = _header_path();
        assert!(header.exists(), "missing {}", header.display());
        let text = std::fs::read_to_string(&header).unwrap();
        assert!(text.contains("flowlab_panel_load"));
        assert!(text.contains("FlowlabPanel"));
    }
}
