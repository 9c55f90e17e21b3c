//! C ABI over the `splitfdr` selection core.
//!
//! All objects are opaque handles created by `sf_*_new`/`sf_select_*`/
//! `sf_simulate` and released with the matching `sf_*_free`. Every entry
//! point returns an [`SfStatus`]; on failure the message is available from
//! [`sf_last_error_message`] on the same thread until the next call.
//!
//! Configuration is passed as JSON text with the same keys as the native
//! config types, so validation is shared with the CLI.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::DMatrix;
use serde::Deserialize;
use splitfdr::bench::ModelTemplate;
use splitfdr::cluster::{CovarianceSpec, Whitener};
use splitfdr::data::DataMatrix;
use splitfdr::error::{Error, ErrorClass};
use splitfdr::mds::{select_mds, split_handle, MdsConfig};
use splitfdr::mirror::{select_ds, SelectConfig, WhiteningMode};
use splitfdr::rng::RngHandle;
use splitfdr::simgen::SimOutput;

/// Result code of every `sf_*` call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidConfig = 2,
    DataError = 3,
    NumericError = 4,
    Panic = 5,
    /// The caller's output buffer is too small.
    BufferTooSmall = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &Error) -> SfStatus {
    match e.class() {
        ErrorClass::Config => SfStatus::InvalidConfig,
        ErrorClass::Data => SfStatus::DataError,
        ErrorClass::Numeric => SfStatus::NumericError,
    }
}

struct Failure(SfStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(SfStatus::NullPointer, format!("{what} is NULL"))
}

/// Runs `f`, converting errors and panics into a status plus message.
fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> SfStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SfStatus::Ok,
        Ok(Err(Failure(s, msg))) => {
            set_error(msg);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            SfStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(s: *const c_char, what: &str) -> Result<Option<&'a str>, Failure> {
    if s.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(s)
        .to_str()
        .map(Some)
        .map_err(|_| Failure(SfStatus::InvalidConfig, format!("{what} is not valid UTF-8")))
}

unsafe fn out_ptr<'a, T>(out: *mut *mut T) -> Result<&'a mut *mut T, Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = ptr::null_mut();
    Ok(&mut *out)
}

unsafe fn copy_out<T: Copy>(src: &[T], dst: *mut T, cap: usize) -> Result<(), Failure> {
    if src.len() > cap {
        return Err(Failure(
            SfStatus::BufferTooSmall,
            format!("buffer holds {cap} values, need {}", src.len()),
        ));
    }
    if src.is_empty() {
        return Ok(());
    }
    if dst.is_null() {
        return Err(null("output buffer"));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    Ok(())
}

/// Dense sample-by-feature matrix.
pub struct SfMatrix {
    inner: DataMatrix,
}

/// Outcome of `sf_select_ds` or `sf_select_mds`.
pub struct SfSelection {
    selected: Vec<usize>,
    scores: Vec<f64>,
    json: CString,
}

/// Simulated matrix with its ground truth.
pub struct SfSimulation {
    inner: SimOutput,
}

/// Selection settings accepted by `sf_select_ds` and `sf_select_mds`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FfiConfig {
    #[serde(default)]
    pub select: SelectConfig,
    #[serde(default)]
    pub mds: MdsConfig,
    /// Known covariance, row by row, for `whitening = "known"`.
    #[serde(default)]
    pub covariance: Option<Vec<Vec<f64>>>,
}

impl FfiConfig {
    /// Parses the JSON text (NULL or empty means defaults) and resolves the
    /// covariance into a whitener.
    pub fn parse(json: Option<&str>, p: usize) -> Result<SelectConfigs, Error> {
        let cfg: FfiConfig = match json.map(str::trim) {
            None | Some("") => FfiConfig::default(),
            Some(s) => serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?,
        };
        let mut select = cfg.select;
        if let Some(rows) = cfg.covariance {
            if select.whitening != WhiteningMode::Known {
                return Err(Error::Config("covariance needs whitening = \"known\"".into()));
            }
            let k = rows.len();
            if k != p || rows.iter().any(|r| r.len() != k) {
                return Err(Error::Config(format!("covariance must be {p}x{p}")));
            }
            let m = DMatrix::from_fn(k, k, |i, j| rows[i][j]);
            select = select.with_whitener(Whitener::new(&CovarianceSpec::user_supplied(m)?)?);
        }
        select.validate(Some(p))?;
        cfg.mds.validate()?;
        Ok(SelectConfigs { select, mds: cfg.mds })
    }
}

/// Validated settings ready to run.
pub struct SelectConfigs {
    pub select: SelectConfig,
    pub mds: MdsConfig,
}

/// Version string of the library, static storage.
#[no_mangle]
pub extern "C" fn sf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL. Valid until
/// the next `sf_*` call on the same thread.
#[no_mangle]
pub extern "C" fn sf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Copies an `n x p` row-major buffer into a new matrix. Non-finite values
/// are rejected with `DataError`.
///
/// # Safety
/// `data` must point to `n * p` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_matrix_new(data: *const f64, n: usize, p: usize, out: *mut *mut SfMatrix) -> SfStatus {
    guard(|| {
        let out = out_ptr(out)?;
        if data.is_null() {
            return Err(null("data"));
        }
        let len = n
            .checked_mul(p)
            .ok_or_else(|| Failure(SfStatus::DataError, "n * p overflows".into()))?;
        let buf = std::slice::from_raw_parts(data, len);
        let inner = DataMatrix::from_row_major(n, p, buf)?;
        *out = Box::into_raw(Box::new(SfMatrix { inner }));
        Ok(())
    })
}

/// # Safety
/// `m` must be NULL or a handle from `sf_matrix_new`/`sf_simulation_matrix`.
#[no_mangle]
pub unsafe extern "C" fn sf_matrix_free(m: *mut SfMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// # Safety
/// `m` must be a valid matrix handle; `n` and `p` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_matrix_dims(m: *const SfMatrix, n: *mut usize, p: *mut usize) -> SfStatus {
    guard(|| {
        let m = m.as_ref().ok_or_else(|| null("matrix"))?;
        if n.is_null() || p.is_null() {
            return Err(null("output pointer"));
        }
        *n = m.inner.n();
        *p = m.inner.p();
        Ok(())
    })
}

unsafe fn run_selection(
    m: *const SfMatrix,
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut SfSelection,
    mds: bool,
) -> SfStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let m = m.as_ref().ok_or_else(|| null("matrix"))?;
        let cfg = FfiConfig::parse(read_str(config_json, "config")?, m.inner.p())?;
        let rng = RngHandle::new(seed);
        let to_json = |v: serde_json::Result<String>| {
            v.map_err(|e| Failure(SfStatus::DataError, e.to_string()))
                .and_then(|s| CString::new(s).map_err(|e| Failure(SfStatus::DataError, e.to_string())))
        };
        let sel = if mds {
            let r = select_mds(&m.inner, &cfg.select, &cfg.mds, rng)?;
            SfSelection {
                json: to_json(serde_json::to_string(&r))?,
                selected: r.selected.clone(),
                scores: r.rates().to_vec(),
            }
        } else {
            let r = select_ds(&m.inner, &cfg.select, split_handle(&rng, 0))?;
            SfSelection {
                json: to_json(serde_json::to_string(&r))?,
                selected: r.selected.clone(),
                scores: r.mirrors.clone(),
            }
        };
        *out = Box::into_raw(Box::new(sel));
        Ok(())
    })
}

/// Single data-splitting selection. `config_json` may be NULL for defaults.
///
/// # Safety
/// `m` must be a valid matrix handle, `config_json` NULL or a
/// NUL-terminated string, and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sf_select_ds(
    m: *const SfMatrix,
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut SfSelection,
) -> SfStatus {
    run_selection(m, config_json, seed, out, false)
}

/// Multiple data-splitting selection. `config_json` may be NULL for defaults.
///
/// # Safety
/// As for [`sf_select_ds`].
#[no_mangle]
pub unsafe extern "C" fn sf_select_mds(
    m: *const SfMatrix,
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut SfSelection,
) -> SfStatus {
    run_selection(m, config_json, seed, out, true)
}

/// Number of selected features.
///
/// # Safety
/// `s` must be a valid selection handle; `len` writable.
#[no_mangle]
pub unsafe extern "C" fn sf_selection_len(s: *const SfSelection, len: *mut usize) -> SfStatus {
    guard(|| {
        let s = s.as_ref().ok_or_else(|| null("selection"))?;
        if len.is_null() {
            return Err(null("len"));
        }
        *len = s.selected.len();
        Ok(())
    })
}

/// Copies the selected 0-based feature indices, ascending.
///
/// # Safety
/// `s` must be a valid selection handle; `buf` must hold `cap` values.
#[no_mangle]
pub unsafe extern "C" fn sf_selection_indices(s: *const SfSelection, buf: *mut usize, cap: usize) -> SfStatus {
    guard(|| {
        let s = s.as_ref().ok_or_else(|| null("selection"))?;
        copy_out(&s.selected, buf, cap)
    })
}

/// Copies the per-feature scores (length p): mirror statistics for DS,
/// the configured inclusion rates for MDS.
///
/// # Safety
/// `s` must be a valid selection handle; `buf` must hold `cap` values.
#[no_mangle]
pub unsafe extern "C" fn sf_selection_scores(s: *const SfSelection, buf: *mut f64, cap: usize) -> SfStatus {
    guard(|| {
        let s = s.as_ref().ok_or_else(|| null("selection"))?;
        copy_out(&s.scores, buf, cap)
    })
}

/// Full result as JSON (0-based indices). Owned by the handle.
///
/// # Safety
/// `s` must be NULL or a valid selection handle.
#[no_mangle]
pub unsafe extern "C" fn sf_selection_json(s: *const SfSelection) -> *const c_char {
    s.as_ref().map_or(ptr::null(), |s| s.json.as_ptr())
}

/// # Safety
/// `s` must be NULL or a handle from `sf_select_*`.
#[no_mangle]
pub unsafe extern "C" fn sf_selection_free(s: *mut SfSelection) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Generates data from a model template given as JSON, for example
/// `{"model":"gaussian","n":100,"p":50,"p1":5,"delta":1}`.
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sf_simulate(config_json: *const c_char, seed: u64, out: *mut *mut SfSimulation) -> SfStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let text = read_str(config_json, "config")?.ok_or_else(|| null("config"))?;
        let template: ModelTemplate =
            serde_json::from_str(text).map_err(|e| Failure(SfStatus::InvalidConfig, e.to_string()))?;
        template.validate()?;
        let inner = template.generate(RngHandle::new(seed))?;
        *out = Box::into_raw(Box::new(SfSimulation { inner }));
        Ok(())
    })
}

/// Copies the simulated data into a new matrix handle.
///
/// # Safety
/// `s` must be a valid simulation handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sf_simulation_matrix(s: *const SfSimulation, out: *mut *mut SfMatrix) -> SfStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let s = s.as_ref().ok_or_else(|| null("simulation"))?;
        *out = Box::into_raw(Box::new(SfMatrix {
            inner: s.inner.data.clone(),
        }));
        Ok(())
    })
}

/// Number of relevant features.
///
/// # Safety
/// `s` must be a valid simulation handle; `len` writable.
#[no_mangle]
pub unsafe extern "C" fn sf_simulation_relevant_len(s: *const SfSimulation, len: *mut usize) -> SfStatus {
    guard(|| {
        let s = s.as_ref().ok_or_else(|| null("simulation"))?;
        if len.is_null() {
            return Err(null("len"));
        }
        *len = s.inner.truth.relevant.len();
        Ok(())
    })
}

/// Copies the 0-based relevant feature indices, ascending.
///
/// # Safety
/// `s` must be a valid simulation handle; `buf` must hold `cap` values.
#[no_mangle]
pub unsafe extern "C" fn sf_simulation_relevant(s: *const SfSimulation, buf: *mut usize, cap: usize) -> SfStatus {
    guard(|| {
        let s = s.as_ref().ok_or_else(|| null("simulation"))?;
        let rel: Vec<usize> = s.inner.truth.relevant.iter().copied().collect();
        copy_out(&rel, buf, cap)
    })
}

/// Copies the true latent value of each sample (length n).
///
/// # Safety
/// `s` must be a valid simulation handle; `buf` must hold `cap` values.
#[no_mangle]
pub unsafe extern "C" fn sf_simulation_latent(s: *const SfSimulation, buf: *mut f64, cap: usize) -> SfStatus {
    guard(|| {
        let s = s.as_ref().ok_or_else(|| null("simulation"))?;
        copy_out(&s.inner.latent, buf, cap)
    })
}

/// # Safety
/// `s` must be NULL or a handle from `sf_simulate`.
#[no_mangle]
pub unsafe extern "C" fn sf_simulation_free(s: *mut SfSimulation) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}
