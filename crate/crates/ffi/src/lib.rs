//! C interface to the registration engine.
//!
//! Images and results are opaque handles owned by the caller and released
//! with the matching `*_free` function. Every fallible call returns an
//! [`AdStatus`]; on failure, [`ad_last_error`] describes what went wrong on
//! the calling thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use accel_diffeo::field::warp;
use accel_diffeo::io::{load_pgm, save_flow, save_pgm};
use accel_diffeo::{run, Error, GridSpec, RunOutcome, ScalarField, Scheme, SolverConfig};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    /// The solver aborted after a failed step.
    Numerical = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdScheme {
    Agd = 0,
    AgdNodissip = 1,
    Epdiff = 2,
    Gd = 3,
    Wave = 4,
}

impl From<AdScheme> for Scheme {
    fn from(s: AdScheme) -> Self {
        match s {
            AdScheme::Agd => Scheme::Agd,
            AdScheme::AgdNodissip => Scheme::AgdNoDissip,
            AdScheme::Epdiff => Scheme::Epdiff,
            AdScheme::Gd => Scheme::Gd,
            AdScheme::Wave => Scheme::Wave,
        }
    }
}

/// Solver settings. Fill with [`ad_config_default`] and adjust.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AdConfig {
    pub scheme: AdScheme,
    pub alpha: f64,
    pub p: u32,
    pub c: f64,
    pub safety: f64,
    pub tol: f64,
    pub max_iters: u64,
    pub eps_visc: f64,
}

/// Grayscale image with intensities in `[0, 1]`.
pub struct AdImage {
    field: ScalarField,
}

/// Outcome of a registration run.
pub struct AdRegistration {
    outcome: RunOutcome,
    warped: ScalarField,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> AdStatus {
    match e {
        Error::Io { .. } => AdStatus::Io,
        Error::PgmHeader(_)
        | Error::PgmTruncated { .. }
        | Error::PgmMaxval(_)
        | Error::FlowMagic(_)
        | Error::FlowSize { .. } => AdStatus::Format,
        _ => AdStatus::InvalidArgument,
    }
}

/// Run `f`, mapping errors and panics to a status code.
fn guard(f: impl FnOnce() -> Result<(), (AdStatus, String)>) -> AdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AdStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            AdStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (AdStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (AdStatus, String) {
    (AdStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char) -> Result<String, (AdStatus, String)> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| (AdStatus::InvalidArgument, "path is not UTF-8".into()))
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ad_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Create an image from `width * height` row-major samples.
///
/// # Safety
/// `data` must point to `width * height` readable doubles and `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn ad_image_new(
    width: u32,
    height: u32,
    data: *const f64,
    out: *mut *mut AdImage,
) -> AdStatus {
    guard(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let grid = GridSpec::new(width as usize, height as usize).map_err(lib_err)?;
        let samples = std::slice::from_raw_parts(data, grid.len()).to_vec();
        let field = ScalarField::new(grid, samples).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(AdImage { field }));
        Ok(())
    })
}

/// Load a P2 or P5 PGM file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ad_image_load_pgm(path: *const c_char, out: *mut *mut AdImage) -> AdStatus {
    guard(|| {
        let path = path_arg(path)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let field = load_pgm(path).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(AdImage { field }));
        Ok(())
    })
}

/// # Safety
/// `image` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ad_image_free(image: *mut AdImage) {
    if !image.is_null() {
        drop(Box::from_raw(image));
    }
}

/// Width and height of an image.
///
/// # Safety
/// `image` must be a live handle; `width` and `height` writable.
#[no_mangle]
pub unsafe extern "C" fn ad_image_size(image: *const AdImage, width: *mut u32, height: *mut u32) -> AdStatus {
    guard(|| {
        let img = image.as_ref().ok_or_else(|| null("image"))?;
        if width.is_null() || height.is_null() {
            return Err(null("width/height"));
        }
        *width = img.field.grid().width as u32;
        *height = img.field.grid().height as u32;
        Ok(())
    })
}

/// Default settings for a scheme and regularity weight.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ad_config_default(scheme: AdScheme, alpha: f64, out: *mut AdConfig) -> AdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let c = SolverConfig::new(scheme.into(), alpha);
        *out = AdConfig {
            scheme,
            alpha: c.alpha,
            p: c.p,
            c: c.c,
            safety: c.safety,
            tol: c.tol,
            max_iters: c.max_iters as u64,
            eps_visc: c.eps_visc,
        };
        Ok(())
    })
}

/// Register `i1` onto `i0`.
///
/// A run that stops at the iteration cap still succeeds; query
/// [`ad_registration_converged`]. A numerical abort returns
/// `AD_STATUS_NUMERICAL` and no handle.
///
/// # Safety
/// All pointers must be valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ad_register(
    i0: *const AdImage,
    i1: *const AdImage,
    config: *const AdConfig,
    out: *mut *mut AdRegistration,
) -> AdStatus {
    guard(|| {
        let i0 = i0.as_ref().ok_or_else(|| null("i0"))?;
        let i1 = i1.as_ref().ok_or_else(|| null("i1"))?;
        let c = config.as_ref().ok_or_else(|| null("config"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let mut cfg = SolverConfig::new(c.scheme.into(), c.alpha);
        cfg.p = c.p;
        cfg.c = c.c;
        cfg.safety = c.safety;
        cfg.tol = c.tol;
        cfg.max_iters = usize::try_from(c.max_iters).unwrap_or(usize::MAX);
        cfg.eps_visc = c.eps_visc;
        let outcome = run(&i0.field, &i1.field, &cfg)
            .map_err(lib_err)?
            .map_err(|e| (AdStatus::Numerical, e.to_string()))?;
        let warped = warp(&i1.field, &outcome.phi).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(AdRegistration { outcome, warped }));
        Ok(())
    })
}

/// # Safety
/// `reg` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ad_registration_free(reg: *mut AdRegistration) {
    if !reg.is_null() {
        drop(Box::from_raw(reg));
    }
}

/// Steps taken; 0 for a null handle.
///
/// # Safety
/// `reg` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ad_registration_iterations(reg: *const AdRegistration) -> u64 {
    reg.as_ref().map_or(0, |r| r.outcome.iterations() as u64)
}

/// 1 if the run met the convergence test, else 0.
///
/// # Safety
/// `reg` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ad_registration_converged(reg: *const AdRegistration) -> i32 {
    reg.as_ref().map_or(0, |r| r.outcome.converged as i32)
}

/// Final potential energy; NaN for a null handle.
///
/// # Safety
/// `reg` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ad_registration_potential(reg: *const AdRegistration) -> f64 {
    reg.as_ref()
        .and_then(|r| r.outcome.trace.last())
        .map_or(f64::NAN, |t| t.potential)
}

/// Copy the displacement of the final map into two arrays of `len` doubles.
///
/// # Safety
/// `ux` and `uy` must each point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ad_registration_displacement(
    reg: *const AdRegistration,
    ux: *mut f64,
    uy: *mut f64,
    len: usize,
) -> AdStatus {
    guard(|| {
        let r = reg.as_ref().ok_or_else(|| null("registration"))?;
        if ux.is_null() || uy.is_null() {
            return Err(null("ux/uy"));
        }
        let phi = &r.outcome.phi;
        if len != phi.grid().len() {
            return Err((
                AdStatus::InvalidArgument,
                format!("buffer holds {len} values, map has {}", phi.grid().len()),
            ));
        }
        std::slice::from_raw_parts_mut(ux, len).copy_from_slice(phi.ux());
        std::slice::from_raw_parts_mut(uy, len).copy_from_slice(phi.uy());
        Ok(())
    })
}

/// Write the final map as a DFLO flow file.
///
/// # Safety
/// `reg` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ad_registration_save_flow(reg: *const AdRegistration, path: *const c_char) -> AdStatus {
    guard(|| {
        let r = reg.as_ref().ok_or_else(|| null("registration"))?;
        let path = path_arg(path)?;
        save_flow(&r.outcome.phi, path).map_err(lib_err)
    })
}

/// Write `I₁` warped by the final map as a binary PGM.
///
/// # Safety
/// `reg` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ad_registration_save_warped(reg: *const AdRegistration, path: *const c_char) -> AdStatus {
    guard(|| {
        let r = reg.as_ref().ok_or_else(|| null("registration"))?;
        let path = path_arg(path)?;
        save_pgm(&r.warped, path).map_err(lib_err)
    })
}
