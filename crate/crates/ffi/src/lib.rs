//! C ABI over `pdeinfo`.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_from_json`
//! functions and released with the matching `*_free`. Every fallible call
//! returns a [`PdiStatus`]; on failure the message is available from
//! [`pdi_last_error`] until the next failing call on the same thread.
//! Matrices are row-major `double` buffers supplied by the caller.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use pdeinfo::cli::{self, ModelConfig};
use pdeinfo::forward::ForwardModel;
use pdeinfo::gaussian::sample_efficient_gaussian;
use pdeinfo::infoop::{assemble_information_matrix, DesignMeasure, InformationMatrix};
use pdeinfo::noise::{NoiseFamily, NoiseModel};
use pdeinfo::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdiStatus {
    Ok = 0,
    /// A run completed but at least one of its checks failed.
    CheckFailed = 1,
    /// Bad config, schema violation or IO failure.
    Config = 2,
    /// Quadrature, solver or factorization failure, or a rejected model.
    Numerical = 3,
    InvalidArgument = 4,
    NullPointer = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Noise density with its Fisher matrix.
pub struct PdiNoise {
    model: NoiseModel,
}

/// Forward model on a fixed wavenumber box and time grid.
pub struct PdiModel {
    model: ForwardModel,
}

/// Galerkin information matrix M with its factorization.
pub struct PdiInfoMatrix {
    info: InformationMatrix,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> PdiStatus {
    match e {
        Error::InvalidArgument(_) | Error::GridMismatch(_) | Error::OutsideSubspace { .. } => PdiStatus::InvalidArgument,
        e if e.is_numerical() => PdiStatus::Numerical,
        _ => PdiStatus::Config,
    }
}

fn fail(status: PdiStatus, msg: impl Into<String>) -> PdiStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, mapping errors and panics to status codes.
fn guard(f: impl FnOnce() -> Result<PdiStatus, PdiStatus>) -> PdiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(s)) | Ok(Err(s)) => s,
        Err(_) => fail(PdiStatus::Panic, "panic inside pdeinfo"),
    }
}

fn lib<T>(r: pdeinfo::Result<T>) -> Result<T, PdiStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

unsafe fn text<'a>(p: *const c_char) -> Result<&'a str, PdiStatus> {
    if p.is_null() {
        return Err(fail(PdiStatus::NullPointer, "null string"));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(PdiStatus::InvalidArgument, "string is not UTF-8"))
}

unsafe fn slice<'a>(p: *const f64, len: usize) -> Result<&'a [f64], PdiStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(PdiStatus::NullPointer, "null array"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, need: usize) -> Result<&'a mut [f64], PdiStatus> {
    if p.is_null() {
        return Err(fail(PdiStatus::NullPointer, "null output buffer"));
    }
    if len < need {
        return Err(fail(PdiStatus::BufferTooSmall, format!("buffer holds {len} values, need {need}")));
    }
    Ok(std::slice::from_raw_parts_mut(p, need))
}

unsafe fn handle<'a, T>(p: *const T) -> Result<&'a T, PdiStatus> {
    p.as_ref().ok_or_else(|| fail(PdiStatus::NullPointer, "null handle"))
}

fn json<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, PdiStatus> {
    serde_json::from_str(s).map_err(|e| fail(PdiStatus::Config, e.to_string()))
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<PdiStatus, PdiStatus> {
    *out = Box::into_raw(Box::new(value));
    Ok(PdiStatus::Ok)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pdi_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pdi_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Noise model from JSON such as `{"family": "gaussian", "variance": 0.25}`.
///
/// # Safety
/// `json_text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pdi_noise_from_json(json_text: *const c_char, out: *mut *mut PdiNoise) -> PdiStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(PdiStatus::NullPointer, "null output handle"));
        }
        let family: NoiseFamily = json(text(json_text)?)?;
        emit(out, PdiNoise { model: lib(NoiseModel::new(family))? })
    })
}

/// Dimension p of the noise (1 or 2).
///
/// # Safety
/// `noise` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn pdi_noise_dim(noise: *const PdiNoise) -> usize {
    noise.as_ref().map_or(0, |n| n.model.dim())
}

/// Writes the p×p Fisher matrix 𝓘_ε, computed by quadrature, into `out`.
///
/// # Safety
/// `noise` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pdi_noise_fisher(noise: *const PdiNoise, out: *mut f64, len: usize) -> PdiStatus {
    guard(|| {
        let n = handle(noise)?;
        let f = lib(n.model.fisher_matrix())?;
        let p = f.matrix.nrows();
        let buf = out_slice(out, len, p * p)?;
        for i in 0..p {
            for j in 0..p {
                buf[i * p + j] = f.matrix[(i, j)];
            }
        }
        Ok(PdiStatus::Ok)
    })
}

/// # Safety
/// `noise` must come from [`pdi_noise_from_json`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pdi_noise_free(noise: *mut PdiNoise) {
    if !noise.is_null() {
        drop(Box::from_raw(noise));
    }
}

/// Forward model from the JSON `model` block of a config, e.g.
/// `{"kind": "heat", "d": 1, "T": 1.0}`, on the wavenumber box `kmax` with
/// `steps` time steps.
///
/// # Safety
/// `json_text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pdi_model_from_json(
    json_text: *const c_char,
    kmax: usize,
    steps: usize,
    out: *mut *mut PdiModel,
) -> PdiStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(PdiStatus::NullPointer, "null output handle"));
        }
        let cfg: ModelConfig = json(text(json_text)?)?;
        emit(out, PdiModel { model: lib(cfg.build(kmax, steps))? })
    })
}

/// Number of eigenvectors the model's box holds.
///
/// # Safety
/// `model` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn pdi_model_modes(model: *const PdiModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.eigensystem().len())
}

/// Writes the Laplacian eigenvalues of the first `len` modes.
///
/// # Safety
/// `model` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pdi_model_eigenvalues(model: *const PdiModel, out: *mut f64, len: usize) -> PdiStatus {
    guard(|| {
        let m = handle(model)?;
        let lam = m.model.eigensystem().eigenvalues();
        if len > lam.len() {
            return Err(fail(PdiStatus::InvalidArgument, format!("model has {} modes", lam.len())));
        }
        out_slice(out, len, len)?.copy_from_slice(&lam[..len]);
        Ok(PdiStatus::Ok)
    })
}

/// # Safety
/// `model` must come from [`pdi_model_from_json`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pdi_model_free(model: *mut PdiModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Assembles the K×K information matrix at θ₀ (`theta0_len` may be 0 for
/// θ₀ = 0). `design_json` may be NULL for the uniform design.
///
/// # Safety
/// Handles must be live, `theta0` must hold `theta0_len` doubles and `out`
/// must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pdi_info_matrix_assemble(
    model: *const PdiModel,
    noise: *const PdiNoise,
    design_json: *const c_char,
    theta0: *const f64,
    theta0_len: usize,
    k: usize,
    out: *mut *mut PdiInfoMatrix,
) -> PdiStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(PdiStatus::NullPointer, "null output handle"));
        }
        let (m, n) = (handle(model)?, handle(noise)?);
        let design: DesignMeasure = if design_json.is_null() { DesignMeasure::Uniform } else { json(text(design_json)?)? };
        let theta0 = slice(theta0, theta0_len)?;
        let fisher = lib(n.model.fisher_matrix())?;
        let a = lib(assemble_information_matrix(&m.model, theta0, &fisher, &design, k))?;
        emit(out, PdiInfoMatrix { info: a.info })
    })
}

/// # Safety
/// `info` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn pdi_info_matrix_dim(info: *const PdiInfoMatrix) -> usize {
    info.as_ref().map_or(0, |i| i.info.dim())
}

/// Copies M into `out` (K×K, row-major).
///
/// # Safety
/// `info` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pdi_info_matrix_copy(info: *const PdiInfoMatrix, out: *mut f64, len: usize) -> PdiStatus {
    guard(|| {
        let m = handle(info)?.info.matrix();
        let k = m.nrows();
        let buf = out_slice(out, len, k * k)?;
        for i in 0..k {
            for j in 0..k {
                buf[i * k + j] = m[(i, j)];
            }
        }
        Ok(PdiStatus::Ok)
    })
}

/// Efficiency bound ψᵀM⁻¹ψ.
///
/// # Safety
/// `info` must be a live handle, `psi` must hold `len` doubles and `out`
/// must point to one double.
#[no_mangle]
pub unsafe extern "C" fn pdi_info_matrix_s_norm_sq(
    info: *const PdiInfoMatrix,
    psi: *const f64,
    len: usize,
    out: *mut f64,
) -> PdiStatus {
    guard(|| {
        let i = handle(info)?;
        let v = lib(i.info.s_norm_sq(slice(psi, len)?))?;
        out_slice(out, 1, 1)?[0] = v;
        Ok(PdiStatus::Ok)
    })
}

/// Draws `m` samples of the efficient Gaussian N(0, M⁻¹) into `out`
/// (m×K, row-major). Results depend only on `seed`.
///
/// # Safety
/// `info` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pdi_info_matrix_sample(
    info: *const PdiInfoMatrix,
    m: usize,
    seed: u64,
    out: *mut f64,
    len: usize,
) -> PdiStatus {
    guard(|| {
        let i = handle(info)?;
        let buf = out_slice(out, len, m * i.info.dim())?;
        let batch = lib(sample_efficient_gaussian(&i.info, m, seed))?;
        buf.copy_from_slice(&batch.to_row_major());
        Ok(PdiStatus::Ok)
    })
}

/// # Safety
/// `info` must come from [`pdi_info_matrix_assemble`] and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn pdi_info_matrix_free(info: *mut PdiInfoMatrix) {
    if !info.is_null() {
        drop(Box::from_raw(info));
    }
}

/// Runs an experiment config (TOML, or JSON when `is_json` is nonzero) into
/// `out_dir`, as `pdeinfo run` does. Returns `PDI_STATUS_CHECK_FAILED` when
/// the run completed with failing checks.
///
/// # Safety
/// Both strings must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn pdi_run_config(
    config_text: *const c_char,
    is_json: c_int,
    out_dir: *const c_char,
    force: c_int,
) -> PdiStatus {
    guard(|| {
        let cfg = lib(cli::parse_config(text(config_text)?, is_json != 0))?;
        let report = lib(cli::run(&cfg, Path::new(text(out_dir)?), force != 0))?;
        Ok(if report.pass { PdiStatus::Ok } else { PdiStatus::CheckFailed })
    })
}
