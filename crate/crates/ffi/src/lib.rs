//! C ABI over the `hrrl` library.
//!
//! Objects cross the boundary as opaque handles (`HrrlConfig`, `HrrlDataset`,
//! `HrrlModel`) created by `*_new`/`*_load`/`hrrl_train` style functions and
//! released with the matching `*_free`. Every fallible call returns an
//! `HrrlStatus`; on failure `hrrl_last_error` describes the most recent error
//! raised on the calling thread. Class and concept ids are 1-based, as in the
//! data files.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use hrrl::cli::{parse_config, LoadedConfig};
use hrrl::data::{reference_distribution, Dataset};
use hrrl::model::{predict, read_snapshot, write_snapshot, ModelParams, SnapshotMeta};
use hrrl::numerics::project_to_simplex;
use hrrl::Error;

#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HrrlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    InvalidConfig = 3,
    Parse = 4,
    Io = 5,
    Snapshot = 6,
    OracleFailure = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// Parsed run configuration.
pub struct HrrlConfig {
    inner: LoadedConfig,
}

pub struct HrrlDataset {
    inner: Dataset,
}

/// Trained or loaded model parameters.
pub struct HrrlModel {
    params: ModelParams,
    meta: SnapshotMeta,
    final_q: Vec<f64>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> HrrlStatus {
    match e {
        Error::InvalidInput(_) => HrrlStatus::InvalidInput,
        Error::InvalidConfig(_) | Error::Config { .. } => HrrlStatus::InvalidConfig,
        Error::Parse { .. } => HrrlStatus::Parse,
        Error::Io { .. } => HrrlStatus::Io,
        Error::Snapshot(_) => HrrlStatus::Snapshot,
        Error::OracleFailure(_) => HrrlStatus::OracleFailure,
    }
}

/// Runs `f`, converting errors and panics into a status plus last-error text.
fn guard(f: impl FnOnce() -> Result<(), (HrrlStatus, String)>) -> HrrlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HrrlStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            HrrlStatus::Panic
        }
    }
}

fn lib<T>(r: hrrl::Result<T>) -> Result<T, (HrrlStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (HrrlStatus, String) {
    (HrrlStatus::NullPointer, format!("{what} is null"))
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, (HrrlStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn slice<'a, T>(
    p: *const T,
    len: usize,
    what: &str,
) -> Result<&'a [T], (HrrlStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(
    p: *mut T,
    len: usize,
    what: &str,
) -> Result<&'a mut [T], (HrrlStatus, String)> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, (HrrlStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        (
            HrrlStatus::InvalidInput,
            format!("{what} is not valid UTF-8"),
        )
    })
}

unsafe fn put<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

fn too_small(needed: usize, got: usize) -> (HrrlStatus, String) {
    (
        HrrlStatus::BufferTooSmall,
        format!("buffer holds {got} values, {needed} needed"),
    )
}

/// Message for the last failed call on this thread. Valid until the next
/// failing call on the same thread; never null.
#[no_mangle]
pub extern "C" fn hrrl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Euclidean projection of `v[0..len]` onto the probability simplex, written to `out`.
///
/// # Safety
/// `v` and `out` must each point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hrrl_project_simplex(
    v: *const f64,
    len: usize,
    out: *mut f64,
) -> HrrlStatus {
    guard(|| {
        let input = slice(v, len, "v")?;
        let p = lib(project_to_simplex(input))?;
        slice_mut(out, len, "out")?.copy_from_slice(p.as_slice());
        Ok(())
    })
}

/// Parses a TOML configuration. `overrides` holds `n_overrides`
/// `section.key=value` strings (may be null when zero). Relative data paths
/// resolve against `base_dir`, or the working directory when it is null.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hrrl_config_new(
    toml_text: *const c_char,
    overrides: *const *const c_char,
    n_overrides: usize,
    base_dir: *const c_char,
    out: *mut *mut HrrlConfig,
) -> HrrlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = string(toml_text, "toml_text")?;
        let mut ov = Vec::with_capacity(n_overrides);
        for &p in slice(overrides, n_overrides, "overrides")? {
            ov.push(string(p, "override")?.to_string());
        }
        let base = if base_dir.is_null() {
            ".".to_string()
        } else {
            string(base_dir, "base_dir")?.to_string()
        };
        let config = lib(parse_config(text, &ov))?;
        put(
            out,
            HrrlConfig {
                inner: LoadedConfig {
                    hash: hrrl::cli::config::config_hash(&config),
                    config,
                    base_dir: base.into(),
                },
            },
        );
        Ok(())
    })
}

/// Copies the 64-character config hash and a terminating NUL into `buf`.
///
/// # Safety
/// `config` must be a live handle and `buf` writable for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn hrrl_config_hash(
    config: *const HrrlConfig,
    buf: *mut c_char,
    len: usize,
) -> HrrlStatus {
    guard(|| {
        let hash = &borrow(config, "config")?.inner.hash;
        if len < hash.len() + 1 {
            return Err(too_small(hash.len() + 1, len));
        }
        let dst = slice_mut(buf as *mut u8, len, "buf")?;
        dst[..hash.len()].copy_from_slice(hash.as_bytes());
        dst[hash.len()] = 0;
        Ok(())
    })
}

/// # Safety
/// `config` must be null or a handle from `hrrl_config_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hrrl_config_free(config: *mut HrrlConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Builds the training (`held_out == false`) or evaluation dataset the configuration describes.
///
/// # Safety
/// `config` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hrrl_dataset_from_config(
    config: *const HrrlConfig,
    held_out: bool,
    out: *mut *mut HrrlDataset,
) -> HrrlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = &borrow(config, "config")?.inner;
        let ds = lib(if held_out {
            cfg.eval_dataset()
        } else {
            cfg.train_dataset()
        })?;
        put(out, HrrlDataset { inner: ds });
        Ok(())
    })
}

/// Dataset from row-major features `x[n·dim]`, labels `y[n]` and the
/// class-to-concept map `class_concept[num_classes]` (ids 1-based).
///
/// # Safety
/// Arrays must have the stated lengths; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hrrl_dataset_new(
    x: *const f64,
    n: usize,
    dim: usize,
    y: *const u32,
    class_concept: *const u32,
    num_classes: usize,
    out: *mut *mut HrrlDataset,
) -> HrrlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let x = slice(x, n * dim, "x")?.to_vec();
        let map = slice(class_concept, num_classes, "class_concept")?;
        let bad = |m: String| (HrrlStatus::InvalidInput, m);
        let class_to_concept = map
            .iter()
            .map(|&k| {
                (k as usize)
                    .checked_sub(1)
                    .ok_or_else(|| bad("concept ids are 1-based".into()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut labels = Vec::with_capacity(n);
        let mut concepts = Vec::with_capacity(n);
        for &c in slice(y, n, "y")? {
            let c = (c as usize)
                .checked_sub(1)
                .filter(|&c| c < num_classes)
                .ok_or_else(|| bad(format!("label {c} outside 1..={num_classes}")))?;
            labels.push(c);
            concepts.push(class_to_concept[c]);
        }
        let k = class_to_concept.iter().max().map_or(0, |m| m + 1);
        let ds = lib(Dataset::new(dim, x, labels, concepts, class_to_concept, k))?;
        put(out, HrrlDataset { inner: ds });
        Ok(())
    })
}

/// # Safety
/// `ds` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hrrl_dataset_len(ds: *const HrrlDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.len())
}

/// # Safety
/// `ds` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hrrl_dataset_dim(ds: *const HrrlDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.dim())
}

/// # Safety
/// `ds` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hrrl_dataset_num_concepts(ds: *const HrrlDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.num_concepts())
}

/// Writes `N_k / N` for every concept into `out[0..len]`; `len` must be at
/// least the number of concepts.
///
/// # Safety
/// `ds` must be a live handle and `out` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hrrl_dataset_reference_distribution(
    ds: *const HrrlDataset,
    out: *mut f64,
    len: usize,
) -> HrrlStatus {
    guard(|| {
        let q0 = reference_distribution(&borrow(ds, "ds")?.inner);
        if len < q0.len() {
            return Err(too_small(q0.len(), len));
        }
        slice_mut(out, len, "out")?[..q0.len()].copy_from_slice(q0.as_slice());
        Ok(())
    })
}

/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hrrl_dataset_free(ds: *mut HrrlDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Trains with the configuration's `[model]`, `[train]` and `[schedule]` settings.
///
/// # Safety
/// `config` and `ds` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hrrl_train(
    config: *const HrrlConfig,
    ds: *const HrrlDataset,
    out: *mut *mut HrrlModel,
) -> HrrlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = &borrow(config, "config")?.inner;
        let ds = &borrow(ds, "ds")?.inner;
        let tc = cfg.train_config();
        let h = lib(hrrl::trainer::train(&tc, ds))?;
        put(
            out,
            HrrlModel {
                params: h.final_params,
                meta: SnapshotMeta {
                    config_hash: cfg.hash.clone(),
                    seed: tc.seed,
                },
                final_q: h.final_q.into_inner(),
            },
        );
        Ok(())
    })
}

/// Final concept distribution of a trained model (`q0` for ERM/EL runs).
/// Writes up to `len` values and stores the number of concepts in `*written`.
///
/// # Safety
/// `model` must be a live handle; `out` writable for `len` doubles; `written` writable.
#[no_mangle]
pub unsafe extern "C" fn hrrl_model_final_q(
    model: *const HrrlModel,
    out: *mut f64,
    len: usize,
    written: *mut usize,
) -> HrrlStatus {
    guard(|| {
        let q = &borrow(model, "model")?.final_q;
        if written.is_null() {
            return Err(null("written"));
        }
        *written = q.len();
        if len < q.len() {
            return Err(too_small(q.len(), len));
        }
        slice_mut(out, len, "out")?[..q.len()].copy_from_slice(q);
        Ok(())
    })
}

/// Predicted 1-based class of one input of length `dim`.
///
/// # Safety
/// `model` must be a live handle, `x` readable for `dim` doubles, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hrrl_model_predict(
    model: *const HrrlModel,
    x: *const f64,
    dim: usize,
    out: *mut u32,
) -> HrrlStatus {
    guard(|| {
        let m = borrow(model, "model")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let c = lib(predict(&m.params, slice(x, dim, "x")?))?;
        *out = (c + 1) as u32;
        Ok(())
    })
}

/// Overall accuracy, and worst-concept accuracy and spread, on `ds`.
///
/// # Safety
/// Handles must be live; output pointers writable (any may be null to skip).
#[no_mangle]
pub unsafe extern "C" fn hrrl_model_evaluate(
    model: *const HrrlModel,
    ds: *const HrrlDataset,
    accuracy: *mut f64,
    worst_concept: *mut f64,
    spread: *mut f64,
) -> HrrlStatus {
    guard(|| {
        let m = borrow(model, "model")?;
        let d = &borrow(ds, "ds")?.inner;
        let p = lib(hrrl::eval::concept_profile(&m.params, d))?;
        for (ptr, v) in [
            (accuracy, p.overall()),
            (worst_concept, p.worst),
            (spread, p.spread),
        ] {
            if let Some(r) = ptr.as_mut() {
                *r = v;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn hrrl_model_save(
    model: *const HrrlModel,
    path: *const c_char,
) -> HrrlStatus {
    guard(|| {
        let m = borrow(model, "model")?;
        lib(write_snapshot(
            Path::new(string(path, "path")?),
            &m.params,
            &m.meta,
        ))
    })
}

/// # Safety
/// `path` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hrrl_model_load(
    path: *const c_char,
    out: *mut *mut HrrlModel,
) -> HrrlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let (params, meta) = lib(read_snapshot(Path::new(string(path, "path")?)))?;
        put(
            out,
            HrrlModel {
                params,
                meta,
                final_q: vec![],
            },
        );
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hrrl_model_free(model: *mut HrrlModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
