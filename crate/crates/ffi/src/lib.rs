//! C interface: opaque cloud and result handles, status codes and a
//! thread-local last-error message.
//!
//! Every function returns a [`C2pStatus`] (or a plain value for accessors
//! that cannot fail) and never unwinds across the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use c2p_core::eval::{run_method, Method, MethodConfigs, MethodOutput};
use c2p_core::geom::{LabeledCloud, Vec3};
use c2p_core::Error;

/// Status code returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum C2pStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    RegistrationFailed = 5,
    Numerical = 6,
    BufferTooSmall = 7,
    Internal = 8,
}

/// Registration method.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum C2pMethod {
    Icp = 0,
    Nicp = 1,
    Cpd = 2,
    C2p = 3,
}

/// Opaque point cloud.
pub struct C2pCloud {
    cloud: LabeledCloud,
}

/// Opaque registration result.
pub struct C2pResult {
    output: MethodOutput,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> C2pStatus {
    match e {
        Error::Io { .. } => C2pStatus::Io,
        Error::Parse { .. } | Error::Json(_) | Error::Csv(_) => C2pStatus::Parse,
        Error::RegistrationFailed(_) | Error::NoCorrespondences | Error::DegenerateCorrespondences(_) => {
            C2pStatus::RegistrationFailed
        }
        Error::Numerical { .. } => C2pStatus::Numerical,
        Error::Harness(_) => C2pStatus::Internal,
        _ => C2pStatus::InvalidArgument,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (C2pStatus, String)>) -> C2pStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            C2pStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            C2pStatus::Internal
        }
    }
}

fn core_err(e: Error) -> (C2pStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (C2pStatus, String) {
    (C2pStatus::NullPointer, format!("{what} is null"))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn c2p_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len - 1` bytes) and returns the full message
/// length in bytes. Pass a null `buf` to query the length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn c2p_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Builds an unlabelled cloud from `n` points stored as `x y z` triples.
///
/// # Safety
/// `xyz` must point to `3 * n` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn c2p_cloud_from_points(xyz: *const f64, n: usize, out: *mut *mut C2pCloud) -> C2pStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if xyz.is_null() {
            return Err(null("xyz"));
        }
        let raw = std::slice::from_raw_parts(xyz, 3 * n);
        let points = raw.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
        let cloud = LabeledCloud::unlabeled(points).map_err(core_err)?;
        *out = Box::into_raw(Box::new(C2pCloud { cloud }));
        Ok(())
    })
}

/// Loads a labelled cloud file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn c2p_cloud_load(path: *const c_char, out: *mut *mut C2pCloud) -> C2pStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (C2pStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
        let cloud = LabeledCloud::load(Path::new(path)).map_err(core_err)?;
        *out = Box::into_raw(Box::new(C2pCloud { cloud }));
        Ok(())
    })
}

/// Number of points; 0 for a null handle.
///
/// # Safety
/// `cloud` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn c2p_cloud_len(cloud: *const C2pCloud) -> usize {
    cloud.as_ref().map_or(0, |c| c.cloud.len())
}

/// Releases a cloud; null is ignored.
///
/// # Safety
/// `cloud` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn c2p_cloud_free(cloud: *mut C2pCloud) {
    if !cloud.is_null() {
        drop(Box::from_raw(cloud));
    }
}

/// Registers `source` to `target` with default settings and the given
/// seed.
///
/// # Safety
/// `source` and `target` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn c2p_register(
    source: *const C2pCloud,
    target: *const C2pCloud,
    method: C2pMethod,
    seed: u64,
    out: *mut *mut C2pResult,
) -> C2pStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let source = source.as_ref().ok_or_else(|| null("source"))?;
        let target = target.as_ref().ok_or_else(|| null("target"))?;
        let method = match method {
            C2pMethod::Icp => Method::Icp,
            C2pMethod::Nicp => Method::Nicp,
            C2pMethod::Cpd => Method::Cpd,
            C2pMethod::C2p => Method::C2p,
        };
        let mut cfg = MethodConfigs::default();
        cfg.c2p.coarse.seed = seed;
        cfg.c2p.pyramid.seed = seed;
        let output = run_method(method, &source.cloud, &target.cloud, &cfg).map_err(core_err)?;
        *out = Box::into_raw(Box::new(C2pResult { output }));
        Ok(())
    })
}

/// Number of displacement vectors (one per source point); 0 for null.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn c2p_result_len(result: *const C2pResult) -> usize {
    result.as_ref().map_or(0, |r| r.output.field.len())
}

/// Copies the displacement field as `x y z` triples into `out`, which must
/// hold `3 * c2p_result_len(result)` doubles (`capacity` counts doubles).
///
/// # Safety
/// `result` must be a live handle; `out` must point to `capacity` writable
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn c2p_result_field(result: *const C2pResult, out: *mut f64, capacity: usize) -> C2pStatus {
    guard(|| {
        let r = result.as_ref().ok_or_else(|| null("result"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let need = 3 * r.output.field.len();
        if capacity < need {
            return Err((C2pStatus::BufferTooSmall, format!("need {need} doubles, got {capacity}")));
        }
        let dst = std::slice::from_raw_parts_mut(out, need);
        for (chunk, v) in dst.chunks_exact_mut(3).zip(r.output.field.vectors()) {
            chunk.copy_from_slice(v.as_slice());
        }
        Ok(())
    })
}

/// Writes the rigid part as a row-major 3x4 matrix `[R | t]`.
///
/// # Safety
/// `result` must be a live handle; `out` must point to 12 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn c2p_result_transform(result: *const C2pResult, out: *mut f64) -> C2pStatus {
    guard(|| {
        let r = result.as_ref().ok_or_else(|| null("result"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let m = r.output.transform.to_row_major();
        ptr::copy_nonoverlapping(m.as_ptr(), out, 12);
        Ok(())
    })
}

/// Releases a result; null is ignored.
///
/// # Safety
/// `result` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn c2p_result_free(result: *mut C2pResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}
