//! C ABI over the gridic simulator.
//!
//! Every entry point returns a [`GridicStatus`]; on failure the message is
//! kept per thread and read back with [`gridic_last_error`]. Objects cross
//! the boundary as opaque handles that the caller releases with the
//! matching `_free` function. Panics never unwind into C.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use gridic::engine::{IntegrationMethod, SolverConfig};
use gridic::grid::{solve_power_flow, GridError, PowerFlowOptions};
use gridic::oracle::run_reference_dae;
use gridic::scenario::{parse_case, run_scenario, write_csv, Case, ScenarioConfig};
use gridic::series::TimeSeries;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridicStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Schema, reference or consistency error in the case, or a bad
    /// argument.
    InvalidInput = 3,
    /// Power flow or transient Newton did not converge.
    Convergence = 4,
    Io = 5,
    OutOfRange = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridicMethod {
    Trapezoidal = 0,
    BackwardEuler = 1,
}

/// Run settings. Obtain defaults from [`gridic_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct GridicConfig {
    pub dt: f64,
    pub t_stop: f64,
    pub method: GridicMethod,
    /// Start the power flow from the voltages stored in the case.
    pub seed_voltages: bool,
    /// Integrate the direct DAE reference instead of the circuit.
    pub reference: bool,
}

/// A parsed case.
pub struct GridicCase(Case);

/// Probed channels of a finished run.
pub struct GridicSeries {
    series: TimeSeries,
    names: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("NULs removed"));
}

struct Failure(GridicStatus, String);

type Outcome = Result<(), Failure>;

fn guard(f: impl FnOnce() -> Outcome) -> GridicStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            GridicStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {msg}"));
            GridicStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(GridicStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(GridicStatus::InvalidUtf8, format!("`{what}`: {e}")))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

fn scenario_failure(e: gridic::scenario::ScenarioError) -> Failure {
    let status = match &e {
        _ if e.is_convergence_failure() => GridicStatus::Convergence,
        gridic::scenario::ScenarioError::Io(_) => GridicStatus::Io,
        _ => GridicStatus::InvalidInput,
    };
    Failure(status, e.to_string())
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn gridic_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn gridic_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn gridic_config_default() -> GridicConfig {
    let s = SolverConfig::default();
    GridicConfig {
        dt: s.dt,
        t_stop: s.t_stop,
        method: GridicMethod::Trapezoidal,
        seed_voltages: false,
        reference: false,
    }
}

/// Parses a case from a NUL-terminated JSON string.
///
/// # Safety
/// `json` must be a valid C string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gridic_case_from_json(json: *const c_char, out: *mut *mut GridicCase) -> GridicStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let text = c_str(json, "json")?;
        let case = parse_case(text.as_bytes()).map_err(scenario_failure)?;
        *out = Box::into_raw(Box::new(GridicCase(case)));
        Ok(())
    })
}

/// Reads and parses a case file.
///
/// # Safety
/// `path` must be a valid C string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gridic_case_from_file(path: *const c_char, out: *mut *mut GridicCase) -> GridicStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = c_str(path, "path")?;
        let bytes = std::fs::read(path).map_err(|e| Failure(GridicStatus::Io, format!("{path}: {e}")))?;
        let case = parse_case(&bytes).map_err(|e| {
            let Failure(s, m) = scenario_failure(e);
            Failure(s, format!("{path}: {m}"))
        })?;
        *out = Box::into_raw(Box::new(GridicCase(case)));
        Ok(())
    })
}

/// # Safety
/// `case` must come from a `gridic_case_from_*` call and not be freed
/// twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn gridic_case_free(case: *mut GridicCase) {
    if !case.is_null() {
        drop(Box::from_raw(case));
    }
}

/// # Safety
/// `case` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gridic_case_bus_count(case: *const GridicCase, out: *mut usize) -> GridicStatus {
    guard(|| {
        let case = deref(case, "case")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = case.0.network.buses.len();
        Ok(())
    })
}

/// Solves the power flow and writes, per bus in case order, the bus id,
/// voltage magnitude (pu) and angle (rad) into arrays of length `len`,
/// which must equal the bus count. Any output pointer may be null.
///
/// # Safety
/// Non-null arrays must hold `len` elements.
#[no_mangle]
pub unsafe extern "C" fn gridic_power_flow(
    case: *const GridicCase,
    seed_voltages: bool,
    ids: *mut u32,
    vmag: *mut f64,
    angle: *mut f64,
    len: usize,
) -> GridicStatus {
    guard(|| {
        let case = deref(case, "case")?;
        let opts = PowerFlowOptions {
            use_seed: seed_voltages,
            ..Default::default()
        };
        let pf = solve_power_flow(&case.0.network, &opts).map_err(|e| {
            let status = match e {
                GridError::Divergence { .. } | GridError::SingularJacobian(_) => GridicStatus::Convergence,
                _ => GridicStatus::InvalidInput,
            };
            Failure(status, e.to_string())
        })?;
        if len != pf.ids.len() {
            return Err(Failure(
                GridicStatus::OutOfRange,
                format!("buffers hold {len} entries, the case has {} buses", pf.ids.len()),
            ));
        }
        for (k, (&id, v)) in pf.ids.iter().zip(&pf.voltages).enumerate() {
            if !ids.is_null() {
                *ids.add(k) = id;
            }
            if !vmag.is_null() {
                *vmag.add(k) = v.norm();
            }
            if !angle.is_null() {
                *angle.add(k) = v.arg();
            }
        }
        Ok(())
    })
}

/// Runs the case's scenario. `config` may be null for the defaults.
///
/// # Safety
/// `case` must be a live handle, `config` null or valid, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gridic_run(
    case: *const GridicCase,
    config: *const GridicConfig,
    out: *mut *mut GridicSeries,
) -> GridicStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let case = deref(case, "case")?;
        let c = if config.is_null() { gridic_config_default() } else { *config };
        let cfg = ScenarioConfig {
            solver: SolverConfig {
                dt: c.dt,
                t_stop: c.t_stop,
                method: match c.method {
                    GridicMethod::Trapezoidal => IntegrationMethod::Trapezoidal,
                    GridicMethod::BackwardEuler => IntegrationMethod::BackwardEuler,
                },
                ..Default::default()
            },
            power_flow: PowerFlowOptions {
                use_seed: c.seed_voltages,
                ..Default::default()
            },
            extra_probes: Vec::new(),
        };
        let series = if c.reference {
            run_reference_dae(&case.0, &cfg).map_err(|e| {
                let status = if e.is_convergence_failure() {
                    GridicStatus::Convergence
                } else {
                    GridicStatus::InvalidInput
                };
                Failure(status, e.to_string())
            })?
        } else {
            run_scenario(&case.0, &cfg).map_err(scenario_failure)?.series
        };
        let names = series
            .names()
            .iter()
            .map(|n| CString::new(n.replace('\0', " ")).expect("NULs removed"))
            .collect();
        *out = Box::into_raw(Box::new(GridicSeries { series, names }));
        Ok(())
    })
}

/// # Safety
/// `series` must come from [`gridic_run`] and not be freed twice. Null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn gridic_series_free(series: *mut GridicSeries) {
    if !series.is_null() {
        drop(Box::from_raw(series));
    }
}

/// Number of samples; 0 for a null handle.
///
/// # Safety
/// `series` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gridic_series_len(series: *const GridicSeries) -> usize {
    series.as_ref().map_or(0, |s| s.series.len())
}

/// Number of channels, not counting time; 0 for a null handle.
///
/// # Safety
/// `series` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gridic_series_channel_count(series: *const GridicSeries) -> usize {
    series.as_ref().map_or(0, |s| s.names.len())
}

/// Name of channel `index`, owned by the handle; null when out of range.
///
/// # Safety
/// `series` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gridic_series_channel_name(series: *const GridicSeries, index: usize) -> *const c_char {
    series
        .as_ref()
        .and_then(|s| s.names.get(index))
        .map_or(ptr::null(), |n| n.as_ptr())
}

unsafe fn copy_out(src: &[f64], buf: *mut f64, len: usize) -> Outcome {
    if buf.is_null() {
        return Err(null("buf"));
    }
    if len < src.len() {
        return Err(Failure(
            GridicStatus::OutOfRange,
            format!("buffer holds {len} values, {} needed", src.len()),
        ));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    Ok(())
}

/// Copies the sample times into `buf` (at least `gridic_series_len`
/// entries).
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn gridic_series_time(series: *const GridicSeries, buf: *mut f64, len: usize) -> GridicStatus {
    guard(|| copy_out(deref(series, "series")?.series.time(), buf, len))
}

/// Copies channel `index` into `buf`.
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn gridic_series_channel(
    series: *const GridicSeries,
    index: usize,
    buf: *mut f64,
    len: usize,
) -> GridicStatus {
    guard(|| {
        let s = deref(series, "series")?;
        let name = s
            .series
            .names()
            .get(index)
            .ok_or_else(|| Failure(GridicStatus::OutOfRange, format!("no channel {index}")))?;
        copy_out(s.series.channel(name).expect("listed"), buf, len)
    })
}

/// Index of the channel called `name`.
///
/// # Safety
/// `name` must be a valid C string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gridic_series_find(
    series: *const GridicSeries,
    name: *const c_char,
    out: *mut usize,
) -> GridicStatus {
    guard(|| {
        let s = deref(series, "series")?;
        let name = c_str(name, "name")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = s
            .series
            .names()
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Failure(GridicStatus::OutOfRange, format!("no channel `{name}`")))?;
        Ok(())
    })
}

/// Writes the series as CSV.
///
/// # Safety
/// `path` must be a valid C string.
#[no_mangle]
pub unsafe extern "C" fn gridic_series_write_csv(series: *const GridicSeries, path: *const c_char) -> GridicStatus {
    guard(|| {
        let s = deref(series, "series")?;
        let path = c_str(path, "path")?;
        write_csv(&s.series, Path::new(path)).map_err(|e| Failure(GridicStatus::Io, format!("{path}: {e}")))
    })
}
