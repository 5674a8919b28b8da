//! C ABI for the helitrack simulator.
//!
//! Every fallible function returns an [`HtStatus`]. On failure the message is
//! available from [`ht_last_error`] on the same thread. Strings handed out by
//! the library are released with [`ht_string_free`]; simulations with
//! [`ht_simulation_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use helitrack::analysis::{analyze, LinearizeRequest};
use helitrack::harness::{self, parse_json, RunLog, Scenario, CSV_COLUMNS};
use helitrack::trajectory::{compress_poly, flip_solve, flip_transcribe, CompressOptions, FlipSpec};
use helitrack::Error;

/// Result codes shared by all entry points.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HtStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Malformed or invalid input document.
    Schema = 3,
    /// The simulation diverged; rows up to the blow-up are kept.
    Divergence = 4,
    /// The trajectory optimization found no feasible solution.
    Infeasible = 5,
    Io = 6,
    /// Operation not valid in the handle's current state.
    InvalidState = 7,
    /// Index or buffer size out of range.
    OutOfRange = 8,
    /// A Rust panic was caught at the boundary.
    Internal = 9,
    Other = 10,
}

/// Opaque simulation handle.
pub struct HtSimulation {
    scenario: Scenario,
    log: Option<RunLog>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &Error) -> HtStatus {
    match e {
        Error::NumericalBlowup { .. } => HtStatus::Divergence,
        Error::Infeasible { .. } => HtStatus::Infeasible,
        Error::Io(_) => HtStatus::Io,
        e if e.exit_code() == 2 => HtStatus::Schema,
        _ => HtStatus::Other,
    }
}

struct Failure(HtStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

/// Runs `f`, converting errors and panics into a status and a stored message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> HtStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HtStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_last_error(format!("internal error: {msg}"));
            HtStatus::Internal
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(HtStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(HtStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn sim_ref<'a>(sim: *const HtSimulation) -> Result<&'a HtSimulation, Failure> {
    sim.as_ref().ok_or_else(|| Failure(HtStatus::NullArgument, "simulation handle is null".into()))
}

unsafe fn sim_mut<'a>(sim: *mut HtSimulation) -> Result<&'a mut HtSimulation, Failure> {
    sim.as_mut().ok_or_else(|| Failure(HtStatus::NullArgument, "simulation handle is null".into()))
}

fn log_of(sim: &HtSimulation) -> Result<&RunLog, Failure> {
    sim.log.as_ref().ok_or_else(|| Failure(HtStatus::InvalidState, "simulation has not been run".into()))
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(HtStatus::NullArgument, "output pointer is null".into()));
    }
    let c = CString::new(s).map_err(|_| Failure(HtStatus::Internal, "output contains a nul byte".into()))?;
    *out = c.into_raw();
    Ok(())
}

unsafe fn put_handle(out: *mut *mut HtSimulation, scenario: Scenario) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(HtStatus::NullArgument, "output pointer is null".into()));
    }
    scenario.validate()?;
    *out = Box::into_raw(Box::new(HtSimulation { scenario, log: None }));
    Ok(())
}

/// Message of the last failed call on this thread, or null. Owned by the
/// library and valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn ht_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn ht_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ht_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Creates a simulation from scenario JSON.
///
/// # Safety
/// `json` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ht_simulation_new(json: *const c_char, out: *mut *mut HtSimulation) -> HtStatus {
    guard(|| {
        let scenario: Scenario = parse_json(read_str(json, "scenario json")?)?;
        put_handle(out, scenario)
    })
}

/// Creates a simulation from a built-in preset name.
///
/// # Safety
/// `name` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ht_simulation_from_preset(name: *const c_char, out: *mut *mut HtSimulation) -> HtStatus {
    guard(|| put_handle(out, harness::preset(read_str(name, "preset name")?)?))
}

/// Releases a simulation. Null is ignored.
///
/// # Safety
/// `sim` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ht_simulation_free(sim: *mut HtSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Runs the scenario, replacing any previous log. A divergence returns
/// `Divergence` and keeps the rows logged before it.
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ht_simulation_run(sim: *mut HtSimulation) -> HtStatus {
    guard(|| {
        let sim = sim_mut(sim)?;
        let log = harness::run(&sim.scenario)?;
        let divergence = log.divergence;
        sim.log = Some(log);
        match divergence {
            Some(d) => Err(Error::NumericalBlowup { t: d.t, step: d.step, omega_norm: d.omega_norm }.into()),
            None => Ok(()),
        }
    })
}

/// Resolved scenario as JSON.
///
/// # Safety
/// `sim` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ht_simulation_scenario_json(sim: *const HtSimulation, out: *mut *mut c_char) -> HtStatus {
    guard(|| put_string(out, sim_ref(sim)?.scenario.to_json()))
}

/// Number of values per logged row.
#[no_mangle]
pub extern "C" fn ht_column_count() -> usize {
    CSV_COLUMNS.len()
}

/// Name of column `index`, or null when out of range. Static storage.
#[no_mangle]
pub extern "C" fn ht_column_name(index: usize) -> *const c_char {
    static NAMES: std::sync::OnceLock<Vec<CString>> = std::sync::OnceLock::new();
    let names = NAMES.get_or_init(|| CSV_COLUMNS.iter().map(|c| CString::new(*c).expect("ascii")).collect());
    names.get(index).map_or(ptr::null(), |c| c.as_ptr())
}

/// Number of logged rows.
///
/// # Safety
/// `sim` must be a live handle; `rows` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ht_simulation_row_count(sim: *const HtSimulation, rows: *mut usize) -> HtStatus {
    guard(|| {
        let n = log_of(sim_ref(sim)?)?.rows.len();
        if rows.is_null() {
            return Err(Failure(HtStatus::NullArgument, "rows is null".into()));
        }
        *rows = n;
        Ok(())
    })
}

/// Copies row `index` into `buf`, which must hold `ht_column_count()` values.
///
/// # Safety
/// `sim` must be a live handle; `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ht_simulation_row(
    sim: *const HtSimulation,
    index: usize,
    buf: *mut f64,
    len: usize,
) -> HtStatus {
    guard(|| {
        let log = log_of(sim_ref(sim)?)?;
        let row = log.rows.get(index).ok_or_else(|| {
            Failure(HtStatus::OutOfRange, format!("row {index} out of range ({} rows)", log.rows.len()))
        })?;
        if buf.is_null() {
            return Err(Failure(HtStatus::NullArgument, "buf is null".into()));
        }
        if len < CSV_COLUMNS.len() {
            return Err(Failure(HtStatus::OutOfRange, format!("buffer holds {len} values, need {}", CSV_COLUMNS.len())));
        }
        let values = row.values();
        ptr::copy_nonoverlapping(values.as_ptr(), buf, values.len());
        Ok(())
    })
}

/// Writes the log as CSV to `path`.
///
/// # Safety
/// `sim` must be a live handle; `path` must be a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ht_simulation_write_csv(sim: *const HtSimulation, path: *const c_char) -> HtStatus {
    guard(|| {
        let log = log_of(sim_ref(sim)?)?;
        harness::write_csv(log, Path::new(read_str(path, "path")?))?;
        Ok(())
    })
}

/// The log as a CSV string.
///
/// # Safety
/// `sim` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ht_simulation_csv(sim: *const HtSimulation, out: *mut *mut c_char) -> HtStatus {
    guard(|| put_string(out, log_of(sim_ref(sim)?)?.to_csv_string()))
}

/// Linearizes the equilibria. `params_json` may be null for defaults; the
/// report is written to `out` as JSON.
///
/// # Safety
/// `params_json` must be null or nul-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ht_linearize(params_json: *const c_char, out: *mut *mut c_char) -> HtStatus {
    guard(|| {
        let request = if params_json.is_null() {
            LinearizeRequest::default()
        } else {
            parse_json(read_str(params_json, "params json")?)?
        };
        let report = analyze(&request)?;
        put_string(out, serde_json::to_string(&report).expect("report serializes"))
    })
}

/// Solves a flip from FlipSpec JSON. Writes the knot table as CSV to
/// `csv_out` and the compressed schedule as JSON to `poly_out`.
///
/// # Safety
/// `spec_json` must be nul-terminated; both outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn ht_optimize_flip(
    spec_json: *const c_char,
    csv_out: *mut *mut c_char,
    poly_out: *mut *mut c_char,
) -> HtStatus {
    guard(|| {
        if csv_out.is_null() || poly_out.is_null() {
            return Err(Failure(HtStatus::NullArgument, "output pointer is null".into()));
        }
        let spec: FlipSpec = parse_json(read_str(spec_json, "flip spec json")?)?;
        let sol = flip_solve(&flip_transcribe(&spec, &Default::default())?)?;
        let poly = compress_poly(&sol, &spec, &CompressOptions::default())?;
        let mut csv = Vec::new();
        sol.write_csv(&mut csv)?;
        put_string(csv_out, String::from_utf8(csv).expect("ascii csv"))?;
        if let Err(e) = put_string(poly_out, serde_json::to_string(&poly).expect("polynomial serializes")) {
            ht_string_free(*csv_out);
            *csv_out = ptr::null_mut();
            return Err(e);
        }
        Ok(())
    })
}
