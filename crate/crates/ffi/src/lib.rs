//! C interface to the fedclust simulator.
//!
//! Objects cross the boundary as opaque handles that the caller releases with
//! the matching `*_free` function. Every fallible call returns an [`FcStatus`];
//! the message of the most recent failure on the calling thread is available
//! from [`fc_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

use fedclust::config::{ExperimentConfig, Preset};
use fedclust::fedsim::fedavg;
use fedclust::nn::{forward, Arch, ParamSet};
use fedclust::pipeline::{self, RunOutput};
use fedclust::rng::SeedTree;
use fedclust::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FcStatus {
    Ok = 0,
    /// Null pointer, bad UTF-8 or an undersized output buffer.
    InvalidArgument = 1,
    /// Rejected configuration or inconsistent input data.
    Validation = 2,
    /// The run itself failed (I/O, numerics).
    Runtime = 3,
    Panic = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FcPreset {
    Paper = 0,
    Desk = 1,
}

impl From<FcPreset> for Preset {
    fn from(p: FcPreset) -> Self {
        match p {
            FcPreset::Paper => Preset::Paper,
            FcPreset::Desk => Preset::Desk,
        }
    }
}

pub struct FcConfig(ExperimentConfig);

pub struct FcRun(RunOutput);

pub struct FcParams(ParamSet);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).unwrap_or_default());
}

fn fail(status: FcStatus, msg: impl Into<String>) -> FcStatus {
    set_error(msg);
    status
}

fn from_error(err: Error) -> FcStatus {
    let status = if err.is_validation() {
        FcStatus::Validation
    } else {
        FcStatus::Runtime
    };
    fail(status, err.to_string())
}

fn guarded(f: impl FnOnce() -> FcStatus) -> FcStatus {
    std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)).unwrap_or_else(|_| fail(FcStatus::Panic, "internal panic"))
}

unsafe fn read_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, FcStatus> {
    if s.is_null() {
        return Err(fail(FcStatus::InvalidArgument, format!("{what} is null")));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(FcStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> FcStatus {
    *out = Box::into_raw(Box::new(value));
    FcStatus::Ok
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(FcStatus::InvalidArgument, concat!(stringify!($p), " is null"));
        })+
    };
}

/// Message of the last failure on this thread; empty when none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn fc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Built-in configuration for `preset`.
///
/// # Safety
/// `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn fc_config_preset(preset: FcPreset, out: *mut *mut FcConfig) -> FcStatus {
    non_null!(out);
    put(out, FcConfig(ExperimentConfig::preset(preset.into())))
}

/// Parses TOML text layered over `preset`. Relative data paths resolve against
/// `base_dir`, or the working directory when it is null.
///
/// # Safety
/// `toml` and a non-null `base_dir` must be NUL-terminated strings; `out` must
/// be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn fc_config_from_toml(
    toml: *const c_char,
    preset: FcPreset,
    base_dir: *const c_char,
    out: *mut *mut FcConfig,
) -> FcStatus {
    non_null!(out);
    let text = match read_str(toml, "toml") {
        Ok(t) => t,
        Err(s) => return s,
    };
    let base = if base_dir.is_null() {
        "."
    } else {
        match read_str(base_dir, "base_dir") {
            Ok(b) => b,
            Err(s) => return s,
        }
    };
    let base = Path::new(base);
    match ExperimentConfig::from_toml(text, preset.into(), &base.join("<config>"), base) {
        Ok(cfg) => put(out, FcConfig(cfg)),
        Err(e) => from_error(e),
    }
}

/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn fc_config_set_seed(cfg: *mut FcConfig, seed: u64) -> FcStatus {
    non_null!(cfg);
    (*cfg).0.seed = seed;
    FcStatus::Ok
}

/// Resolved configuration as TOML; free with [`fc_string_free`].
///
/// # Safety
/// `cfg` must be a live config handle and `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn fc_config_to_toml(cfg: *const FcConfig, out: *mut *mut c_char) -> FcStatus {
    non_null!(cfg, out);
    match CString::new((*cfg).0.to_toml()) {
        Ok(s) => {
            *out = s.into_raw();
            FcStatus::Ok
        }
        Err(_) => fail(FcStatus::Runtime, "config text contains NUL"),
    }
}

/// # Safety
/// `cfg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fc_config_free(cfg: *mut FcConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

unsafe fn run_with(
    cfg: *const FcConfig,
    workers: usize,
    out: *mut *mut FcRun,
    run: fn(&ExperimentConfig) -> fedclust::Result<RunOutput>,
) -> FcStatus {
    non_null!(cfg, out);
    if workers == 0 {
        return fail(FcStatus::InvalidArgument, "workers must be at least 1");
    }
    let cfg = &(*cfg).0;
    guarded(|| match pipeline::with_workers(workers, || run(cfg)) {
        Ok(Ok(result)) => put(out, FcRun(result)),
        Ok(Err(e)) | Err(e) => from_error(e),
    })
}

/// Runs dynamic clustering on `workers` threads.
///
/// # Safety
/// `cfg` must be a live config handle and `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn fc_run_dynamic(cfg: *const FcConfig, workers: usize, out: *mut *mut FcRun) -> FcStatus {
    run_with(cfg, workers, out, pipeline::run_dynamic)
}

/// Runs the feature-clustering baseline on `workers` threads.
///
/// # Safety
/// `cfg` must be a live config handle and `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn fc_run_baseline(cfg: *const FcConfig, workers: usize, out: *mut *mut FcRun) -> FcStatus {
    run_with(cfg, workers, out, pipeline::run_baseline)
}

/// # Safety
/// `run` must be a live run handle.
#[no_mangle]
pub unsafe extern "C" fn fc_run_final_k(run: *const FcRun) -> usize {
    if run.is_null() {
        return 0;
    }
    (*run).0.summary.final_k
}

/// Membership-weighted test MSE; NaN for a null handle.
///
/// # Safety
/// `run` must be a live run handle.
#[no_mangle]
pub unsafe extern "C" fn fc_run_test_mse(run: *const FcRun) -> f64 {
    if run.is_null() {
        return f64::NAN;
    }
    (*run).0.summary.test_mse
}

/// Sample-level purity of the initial clustering. Writes `false` to
/// `available` when the data carries no ground truth.
///
/// # Safety
/// `run` must be a live run handle; `purity` and `available` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fc_run_purity(run: *const FcRun, purity: *mut f64, available: *mut bool) -> FcStatus {
    non_null!(run, purity, available);
    match (*run).0.summary.clustering_purity {
        Some(p) => {
            *purity = p;
            *available = true;
        }
        None => *available = false,
    }
    FcStatus::Ok
}

/// Final cluster of every client, ordered by client id. `len` receives the
/// client count; with null buffers only the count is reported.
///
/// # Safety
/// Non-null `clients` and `clusters` must each hold `cap` elements; `len`
/// must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn fc_run_assignment(
    run: *const FcRun,
    clients: *mut usize,
    clusters: *mut u32,
    cap: usize,
    len: *mut usize,
) -> FcStatus {
    non_null!(run, len);
    let assignment = &(*run).0.summary.assignment;
    *len = assignment.len();
    if clients.is_null() && clusters.is_null() {
        return FcStatus::Ok;
    }
    if clients.is_null() || clusters.is_null() {
        return fail(FcStatus::InvalidArgument, "clients and clusters must both be set");
    }
    if cap < assignment.len() {
        return fail(
            FcStatus::InvalidArgument,
            format!("buffer holds {cap} entries, {} needed", assignment.len()),
        );
    }
    for (i, (&c, &k)) in assignment.iter().enumerate() {
        *clients.add(i) = c;
        *clusters.add(i) = k;
    }
    FcStatus::Ok
}

/// Run summary as JSON; free with [`fc_string_free`].
///
/// # Safety
/// `run` must be a live run handle and `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn fc_run_summary_json(run: *const FcRun, out: *mut *mut c_char) -> FcStatus {
    non_null!(run, out);
    let json = match serde_json::to_string(&(*run).0.summary) {
        Ok(j) => j,
        Err(e) => return from_error(e.into()),
    };
    match CString::new(json) {
        Ok(s) => {
            *out = s.into_raw();
            FcStatus::Ok
        }
        Err(_) => fail(FcStatus::Runtime, "summary contains NUL"),
    }
}

/// Writes summary, metrics log, assignment history and `cfg` into `dir`.
///
/// # Safety
/// Handles must be live and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fc_run_write(run: *const FcRun, cfg: *const FcConfig, dir: *const c_char) -> FcStatus {
    non_null!(run, cfg);
    let dir = match read_str(dir, "dir") {
        Ok(d) => d,
        Err(s) => return s,
    };
    match pipeline::write_artifacts(Path::new(dir), &(*cfg).0, &(*run).0) {
        Ok(()) => FcStatus::Ok,
        Err(e) => from_error(e),
    }
}

/// # Safety
/// `run` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fc_run_free(run: *mut FcRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Freshly initialized LSTM forecaster: `input_len` steps in, `horizon` out.
///
/// # Safety
/// `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn fc_params_forecaster(
    input_len: usize,
    units: usize,
    horizon: usize,
    seed: u64,
    out: *mut *mut FcParams,
) -> FcStatus {
    non_null!(out);
    match Arch::lstm_forecaster(input_len, units, horizon) {
        Ok(arch) => put(out, FcParams(ParamSet::init(arch, &mut SeedTree::new(seed).rng()))),
        Err(e) => from_error(e),
    }
}

/// Number of scalar parameters; 0 for a null handle.
///
/// # Safety
/// `params` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fc_params_len(params: *const FcParams) -> usize {
    if params.is_null() {
        return 0;
    }
    (*params).0.len()
}

/// Copies the flat parameter vector into `values`, which holds `cap` entries.
///
/// # Safety
/// `params` must be live and `values` valid for `cap` writes.
#[no_mangle]
pub unsafe extern "C" fn fc_params_get(params: *const FcParams, values: *mut f64, cap: usize) -> FcStatus {
    non_null!(params, values);
    let src = (*params).0.values();
    if cap < src.len() {
        return fail(
            FcStatus::InvalidArgument,
            format!("buffer holds {cap} values, {} needed", src.len()),
        );
    }
    ptr::copy_nonoverlapping(src.as_ptr(), values, src.len());
    FcStatus::Ok
}

/// Overwrites the parameters with `len` values, which must match
/// [`fc_params_len`] and be finite.
///
/// # Safety
/// `params` must be live and `values` valid for `len` reads.
#[no_mangle]
pub unsafe extern "C" fn fc_params_set(params: *mut FcParams, values: *const f64, len: usize) -> FcStatus {
    non_null!(params, values);
    let target = &mut (*params).0;
    let src = std::slice::from_raw_parts(values, len);
    match ParamSet::new(target.arch().clone(), src.to_vec()) {
        Ok(p) => {
            *target = p;
            FcStatus::Ok
        }
        Err(e) => from_error(e),
    }
}

/// Forecast for one input window.
///
/// # Safety
/// `params` must be live, `input` valid for `input_len` reads and `output`
/// for `output_cap` writes.
#[no_mangle]
pub unsafe extern "C" fn fc_params_forward(
    params: *const FcParams,
    input: *const f64,
    input_len: usize,
    output: *mut f64,
    output_cap: usize,
) -> FcStatus {
    non_null!(params, input, output);
    let y = match forward(&(*params).0, std::slice::from_raw_parts(input, input_len)) {
        Ok(y) => y,
        Err(e) => return from_error(e),
    };
    if output_cap < y.len() {
        return fail(
            FcStatus::InvalidArgument,
            format!("output holds {output_cap} values, {} needed", y.len()),
        );
    }
    ptr::copy_nonoverlapping(y.as_ptr(), output, y.len());
    FcStatus::Ok
}

/// Weighted federated average of `n` same-shaped parameter sets.
///
/// # Safety
/// `params` must point to `n` live handles and `weights` to `n` values;
/// `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn fc_fedavg(
    params: *const *const FcParams,
    weights: *const f64,
    n: usize,
    out: *mut *mut FcParams,
) -> FcStatus {
    non_null!(params, weights, out);
    let handles = std::slice::from_raw_parts(params, n);
    if handles.iter().any(|h| h.is_null()) {
        return fail(FcStatus::InvalidArgument, "params contains a null handle");
    }
    let sets: Vec<&ParamSet> = handles.iter().map(|&h| &(*h).0).collect();
    match fedavg(&sets, std::slice::from_raw_parts(weights, n)) {
        Ok(p) => put(out, FcParams(p)),
        Err(e) => from_error(e),
    }
}

/// # Safety
/// `params` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fc_params_free(params: *mut FcParams) {
    if !params.is_null() {
        drop(Box::from_raw(params));
    }
}
