//! C interface to the deterministic solver.
//!
//! Handles are opaque and owned by the caller, who releases them with the
//! matching `*_free` function. Every fallible call returns an [`IamStatus`];
//! on failure [`iam_last_error`] describes the problem for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use iam_core::calibration::{load_calibration, parse_calibration, Calibration};
use iam_core::det::{DetOptions, DetProblem, Horizon, Trajectory};
use iam_core::IamError;

/// Status codes. `IAM_NUMERICAL` and `IAM_CONFIG` match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IamStatus {
    IamOk = 0,
    IamNumerical = 1,
    IamConfig = 2,
    IamNullArgument = 3,
    IamInvalidArgument = 4,
    IamBufferTooSmall = 5,
    IamPanic = 6,
}

/// Loaded calibration.
pub struct IamCalibration {
    inner: Calibration,
}

/// Solved deterministic trajectory.
pub struct IamDetSolution {
    inner: Trajectory,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

fn from_core(err: IamError) -> IamStatus {
    set_error(err.to_string());
    if err.exit_code() == 2 {
        IamStatus::IamConfig
    } else {
        IamStatus::IamNumerical
    }
}

fn guard(f: impl FnOnce() -> Result<(), IamStatus>) -> IamStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IamStatus::IamOk,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            IamStatus::IamPanic
        }
    }
}

fn invalid(msg: &str) -> IamStatus {
    set_error(msg);
    IamStatus::IamInvalidArgument
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, IamStatus> {
    if p.is_null() {
        set_error(format!("{what} is null"));
        return Err(IamStatus::IamNullArgument);
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(&format!("{what} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, IamStatus> {
    p.as_ref().ok_or_else(|| {
        set_error(format!("{what} is null"));
        IamStatus::IamNullArgument
    })
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, IamStatus> {
    p.as_mut().ok_or_else(|| {
        set_error(format!("{what} is null"));
        IamStatus::IamNullArgument
    })
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn iam_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn iam_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a calibration TOML file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn iam_calibration_load(path: *const c_char, out: *mut *mut IamCalibration) -> IamStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = std::ptr::null_mut();
        let path = str_arg(path, "path")?;
        let cal = load_calibration(Path::new(path)).map_err(from_core)?;
        *out = Box::into_raw(Box::new(IamCalibration { inner: cal }));
        Ok(())
    })
}

/// Parses calibration TOML text (no `base` inheritance).
///
/// # Safety
/// `src` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn iam_calibration_parse(src: *const c_char, out: *mut *mut IamCalibration) -> IamStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = std::ptr::null_mut();
        let src = str_arg(src, "src")?;
        let cal = parse_calibration(src, "<memory>").map_err(from_core)?;
        *out = Box::into_raw(Box::new(IamCalibration { inner: cal }));
        Ok(())
    })
}

/// Overrides a scalar parameter, e.g. `ecs`, `pi2` or `beta_annual`.
///
/// # Safety
/// `cal` must come from this library; `name` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn iam_calibration_set(cal: *mut IamCalibration, name: *const c_char, value: f64) -> IamStatus {
    guard(|| {
        let cal = out_arg(cal, "cal")?;
        let name = str_arg(name, "name")?;
        let mut params = cal.inner.params.clone();
        params.set_scalar(name, value).map_err(from_core)?;
        params.validate().map_err(from_core)?;
        cal.inner.params = params;
        Ok(())
    })
}

/// # Safety
/// `cal` must come from this library (or be null) and not be used again.
#[no_mangle]
pub unsafe extern "C" fn iam_calibration_free(cal: *mut IamCalibration) {
    if !cal.is_null() {
        drop(Box::from_raw(cal));
    }
}

/// Solves the deterministic program over `n_periods` controlled periods
/// with the fixed-savings continuation. `tol` is the projected-gradient
/// norm a solution must reach; `tol <= 0` uses the default.
///
/// # Safety
/// `cal` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn iam_det_solve(
    cal: *const IamCalibration,
    n_periods: usize,
    tol: f64,
    out: *mut *mut IamDetSolution,
) -> IamStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = std::ptr::null_mut();
        let cal = &ref_arg(cal, "cal")?.inner;
        let mut opts = DetOptions::default();
        if tol > 0.0 {
            opts.tol = tol;
        }
        let h = Horizon::with_continuation(n_periods, &cal.params).map_err(from_core)?;
        let problem = DetProblem::new(&cal.params, &cal.paths, h, &cal.initial).map_err(from_core)?;
        let traj = problem.solve(None, &opts).map_err(from_core)?;
        *out = Box::into_raw(Box::new(IamDetSolution { inner: traj }));
        Ok(())
    })
}

/// Controlled periods of a solution.
///
/// # Safety
/// `sol` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn iam_det_periods(sol: *const IamDetSolution) -> usize {
    sol.as_ref().map_or(0, |s| s.inner.n_periods())
}

/// Discounted welfare of a solution.
///
/// # Safety
/// `sol` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn iam_det_welfare(sol: *const IamDetSolution, out: *mut f64) -> IamStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(sol, "sol")?.inner.welfare;
        Ok(())
    })
}

/// Copies one series into `buf`. Names: `K`, `M_AT`, `M_UO`, `M_DO`,
/// `T_AT`, `T_OC`, `C`, `mu`, `s`, `E`, `SCC`, `tax`. `*len` is always set
/// to the series length; `IAM_BUFFER_TOO_SMALL` is returned when `cap` is
/// smaller.
///
/// # Safety
/// `buf` must hold `cap` doubles (it may be null when `cap` is 0).
#[no_mangle]
pub unsafe extern "C" fn iam_det_series(
    sol: *const IamDetSolution,
    name: *const c_char,
    buf: *mut f64,
    cap: usize,
    len: *mut usize,
) -> IamStatus {
    guard(|| {
        let tr = &ref_arg(sol, "sol")?.inner;
        let name = str_arg(name, "name")?;
        let len = out_arg(len, "len")?;
        let n = tr.n_periods();
        let states = &tr.states[..n];
        let series: Vec<f64> = match name {
            "K" => states.iter().map(|s| s.k).collect(),
            "M_AT" => states.iter().map(|s| s.m[0]).collect(),
            "M_UO" => states.iter().map(|s| s.m[1]).collect(),
            "M_DO" => states.iter().map(|s| s.m[2]).collect(),
            "T_AT" => states.iter().map(|s| s.t[0]).collect(),
            "T_OC" => states.iter().map(|s| s.t[1]).collect(),
            "C" => tr.decisions.iter().map(|d| d.c).collect(),
            "mu" => tr.decisions.iter().map(|d| d.mu).collect(),
            "s" => tr.savings.clone(),
            "E" => tr.emissions.clone(),
            "SCC" => tr.scc_path.clone(),
            "tax" => tr.tax_path.clone(),
            other => return Err(invalid(&format!("unknown series '{other}'"))),
        };
        *len = series.len();
        if cap < series.len() {
            set_error(format!(
                "series '{name}' needs {} values, buffer holds {cap}",
                series.len()
            ));
            return Err(IamStatus::IamBufferTooSmall);
        }
        if buf.is_null() {
            set_error("buf is null");
            return Err(IamStatus::IamNullArgument);
        }
        std::ptr::copy_nonoverlapping(series.as_ptr(), buf, series.len());
        Ok(())
    })
}

/// # Safety
/// `sol` must come from this library (or be null) and not be used again.
#[no_mangle]
pub unsafe extern "C" fn iam_det_free(sol: *mut IamDetSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}
