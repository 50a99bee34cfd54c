//! C interface to `emc_probe`.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_load`
//! style calls and released by the matching `*_free`. Every fallible call
//! returns an [`EmcStatus`]; on failure, [`emc_last_error`] describes the
//! problem for the calling thread. Strings returned through out-pointers are
//! owned by the caller and released with [`emc_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use emc_probe::converge::ConvergenceCriteria;
use emc_probe::data::{load_csv, synth_clusters, Dataset};
use emc_probe::emc::{search, EMCConfig, EMCResult};
use emc_probe::models::ModelSpec;
use emc_probe::optim::TrainConfig;
use emc_probe::reparam::Reparam;
use emc_probe::runner::{run_sweep, to_stable_json, ExperimentConfig, RunRecord};
use emc_probe::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Config = 4,
    Io = 5,
    Numeric = 6,
    OutOfRange = 7,
    Panic = 8,
}

/// A loaded dataset.
pub struct EmcDataset(Dataset);

/// Result of one EMC search with the thresholds it used.
pub struct EmcMeasurement {
    result: EMCResult,
    criteria: ConvergenceCriteria,
}

/// Records of a completed sweep.
pub struct EmcSweep {
    records: Vec<RunRecord>,
    failed: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(EmcStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } | Error::Format { .. } | Error::Truncated { .. } | Error::Csv(_) => EmcStatus::Io,
            Error::Config(_) | Error::InvalidSpec(_) | Error::InvalidTransform(_) | Error::Json(_) | Error::TuneExhausted => {
                EmcStatus::Config
            }
            Error::NonFinite { .. } | Error::Divergence { .. } | Error::NonFiniteLoss { .. } => EmcStatus::Numeric,
            _ => EmcStatus::InvalidArgument,
        };
        Fail(status, e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(EmcStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f` with panics contained and errors recorded.
fn guard<F>(f: F) -> EmcStatus
where
    F: FnOnce() -> Result<(), Fail>,
{
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EmcStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            EmcStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(EmcStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

fn json<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> Result<T, Fail> {
    serde_json::from_str(text).map_err(|e| Fail(EmcStatus::Config, format!("{what}: {e}")))
}

fn c_string(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Fail(EmcStatus::InvalidArgument, "string contains NUL".into()))
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn emc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn emc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must be null or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn emc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Gaussian class clusters.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn emc_dataset_synth_clusters(
    classes: usize,
    dim: usize,
    n: usize,
    separation: f64,
    seed: u64,
    out: *mut *mut EmcDataset,
) -> EmcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let ds = synth_clusters(classes, dim, n, separation, seed)?;
        *out = Box::into_raw(Box::new(EmcDataset(ds)));
        Ok(())
    })
}

/// Numeric CSV with a label column.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn emc_dataset_load_csv(
    path: *const c_char,
    label_column: *const c_char,
    num_classes: usize,
    out: *mut *mut EmcDataset,
) -> EmcStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let label = str_arg(label_column, "label_column")?;
        let out = out_arg(out, "out")?;
        let ds = load_csv(Path::new(path), label, num_classes)?;
        *out = Box::into_raw(Box::new(EmcDataset(ds)));
        Ok(())
    })
}

/// # Safety
/// `ds` must be a live dataset handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn emc_dataset_len(ds: *const EmcDataset, out: *mut usize) -> EmcStatus {
    guard(|| {
        *out_arg(out, "out")? = handle(ds, "dataset")?.0.len();
        Ok(())
    })
}

/// # Safety
/// `ds` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn emc_dataset_free(ds: *mut EmcDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Parameter count of a JSON model spec.
///
/// # Safety
/// `model_json` must be NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn emc_param_count(model_json: *const c_char, out: *mut usize) -> EmcStatus {
    guard(|| {
        let spec: ModelSpec = json(str_arg(model_json, "model_json")?, "model")?;
        spec.validate()?;
        *out_arg(out, "out")? = spec.param_count();
        Ok(())
    })
}

/// Measures the EMC of a model on `ds`. The model, training and search
/// configs are JSON documents in the run-config format; `reparam_json` may
/// be null for the plain parameterization.
///
/// # Safety
/// Handles must be live, strings NUL-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn emc_measure(
    ds: *const EmcDataset,
    model_json: *const c_char,
    train_json: *const c_char,
    emc_json: *const c_char,
    reparam_json: *const c_char,
    out: *mut *mut EmcMeasurement,
) -> EmcStatus {
    guard(|| {
        let ds = &handle(ds, "dataset")?.0;
        let spec: ModelSpec = json(str_arg(model_json, "model_json")?, "model")?;
        let train: TrainConfig = json(str_arg(train_json, "train_json")?, "train")?;
        let emc: EMCConfig = json(str_arg(emc_json, "emc_json")?, "emc")?;
        let reparam: Reparam =
            if reparam_json.is_null() { Reparam::None } else { json(str_arg(reparam_json, "reparam_json")?, "reparam")? };
        let out = out_arg(out, "out")?;
        spec.validate()?;
        train.validate()?;
        emc.validate()?;
        reparam.validate()?;
        let (result, criteria) = search(&spec, ds, &emc, &train, &reparam)?;
        *out = Box::into_raw(Box::new(EmcMeasurement { result, criteria }));
        Ok(())
    })
}

/// # Safety
/// `m` must be a live measurement; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn emc_measurement_emc(m: *const EmcMeasurement, out: *mut usize) -> EmcStatus {
    guard(|| {
        *out_arg(out, "out")? = handle(m, "measurement")?.result.emc;
        Ok(())
    })
}

/// Writes whether the search hit `max_n` and whether it failed at `start_n`.
///
/// # Safety
/// `m` must be a live measurement; out-pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn emc_measurement_flags(
    m: *const EmcMeasurement,
    saturated: *mut bool,
    below_start: *mut bool,
) -> EmcStatus {
    guard(|| {
        let m = handle(m, "measurement")?;
        *out_arg(saturated, "saturated")? = m.result.saturated;
        *out_arg(below_start, "below_start")? = m.result.below_start;
        Ok(())
    })
}

/// Full result with trace and resolved thresholds as JSON.
///
/// # Safety
/// `m` must be a live measurement; `out` must be valid. Free the string
/// with `emc_string_free`.
#[no_mangle]
pub unsafe extern "C" fn emc_measurement_to_json(m: *const EmcMeasurement, out: *mut *mut c_char) -> EmcStatus {
    guard(|| {
        let m = handle(m, "measurement")?;
        let out = out_arg(out, "out")?;
        let v = serde_json::json!({ "result": m.result, "convergence": m.criteria });
        *out = c_string(to_stable_json(&v)?)?;
        Ok(())
    })
}

/// # Safety
/// `m` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn emc_measurement_free(m: *mut EmcMeasurement) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Runs the sweep described by a config file, writing its outputs.
///
/// # Safety
/// `config_path` must be NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn emc_sweep_run(config_path: *const c_char, resume: bool, out: *mut *mut EmcSweep) -> EmcStatus {
    guard(|| {
        let path = str_arg(config_path, "config_path")?;
        let out = out_arg(out, "out")?;
        let cfg = ExperimentConfig::load(Path::new(path))?;
        let s = run_sweep(&cfg, resume)?;
        *out = Box::into_raw(Box::new(EmcSweep { records: s.records, failed: s.failed }));
        Ok(())
    })
}

/// # Safety
/// `s` must be a live sweep; out-pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn emc_sweep_counts(s: *const EmcSweep, records: *mut usize, failed: *mut usize) -> EmcStatus {
    guard(|| {
        let s = handle(s, "sweep")?;
        *out_arg(records, "records")? = s.records.len();
        *out_arg(failed, "failed")? = s.failed;
        Ok(())
    })
}

/// Record `index` as JSON.
///
/// # Safety
/// `s` must be a live sweep; `out` must be valid. Free the string with
/// `emc_string_free`.
#[no_mangle]
pub unsafe extern "C" fn emc_sweep_record_json(s: *const EmcSweep, index: usize, out: *mut *mut c_char) -> EmcStatus {
    guard(|| {
        let s = handle(s, "sweep")?;
        let out = out_arg(out, "out")?;
        let r = s
            .records
            .get(index)
            .ok_or_else(|| Fail(EmcStatus::OutOfRange, format!("record {index} of {}", s.records.len())))?;
        *out = c_string(to_stable_json(r)?)?;
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn emc_sweep_free(s: *mut EmcSweep) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}
