//! C ABI for the closed-form numerics, phase classification and urn sampling
//! of `tbrw-core`.
//!
//! Objects cross the boundary as opaque handles created by `*_new` functions
//! and released by the matching `*_free`. Every fallible call returns a
//! [`TbrwStatus`]; on failure the message is available from
//! [`tbrw_last_error_message`] on the same thread. Panics are caught and
//! reported as [`TbrwStatus::Internal`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use tbrw_core::analysis::{classify_phase, Phase};
use tbrw_core::bmc::{eigen_check, generating_identity_check, mean_matrix_closed_form, spectral_radius, MeanMatrix};
use tbrw_core::urn::{run_until_kth_zero, DEFAULT_URN_STEP_CAP};
use tbrw_core::{critical_rho, Error, ExtendedReal, ModelParams, OffspringDistribution, RngStream};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TbrwStatus {
    Ok = 0,
    /// Null pointer or out-of-range argument.
    InvalidArgument = 1,
    /// Invalid parameters or a violated precondition.
    Precondition = 2,
    /// Non-convergence or an exceeded cap.
    Numeric = 3,
    Invariant = 4,
    Internal = 5,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TbrwPhase {
    Transient = 0,
    NullRecurrent = 1,
    PositiveRecurrent = 2,
}

/// Opaque model parameters (ρ, ν).
pub struct TbrwParams(ModelParams);

/// Opaque truncated mean matrix.
pub struct TbrwMatrix(MeanMatrix);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> TbrwStatus {
    match err.exit_code() {
        2 => TbrwStatus::Precondition,
        3 => TbrwStatus::Numeric,
        4 => TbrwStatus::Invariant,
        _ => TbrwStatus::Internal,
    }
}

fn guard<F: FnOnce() -> Result<(), (TbrwStatus, String)>>(f: F) -> TbrwStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TbrwStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            TbrwStatus::Internal
        }
    }
}

fn core<T>(r: tbrw_core::Result<T>) -> Result<T, (TbrwStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn invalid(msg: &str) -> (TbrwStatus, String) {
    (TbrwStatus::InvalidArgument, msg.to_string())
}

unsafe fn deref<'a, T>(p: *const T, name: &str) -> Result<&'a T, (TbrwStatus, String)> {
    p.as_ref().ok_or_else(|| invalid(&format!("{name} is null")))
}

unsafe fn write<T>(p: *mut T, value: T, name: &str) -> Result<(), (TbrwStatus, String)> {
    if p.is_null() {
        return Err(invalid(&format!("{name} is null")));
    }
    p.write(value);
    Ok(())
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn tbrw_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Parameters from JSON such as `{"rho":3,"nu":{"type":"point_mass","m":1}}`.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tbrw_params_from_json(json: *const c_char, out: *mut *mut TbrwParams) -> TbrwStatus {
    guard(|| {
        if json.is_null() {
            return Err(invalid("json is null"));
        }
        let text = CStr::from_ptr(json).to_str().map_err(|_| invalid("json is not UTF-8"))?;
        let params: ModelParams =
            serde_json::from_str(text).map_err(|e| (TbrwStatus::Precondition, format!("invalid parameters: {e}")))?;
        write(out, Box::into_raw(Box::new(TbrwParams(params))), "out")
    })
}

/// Parameters with ν a point mass at `m`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tbrw_params_point_mass(rho: f64, m: u64, out: *mut *mut TbrwParams) -> TbrwStatus {
    guard(|| {
        let nu = core(OffspringDistribution::point_mass(m))?;
        let params = core(ModelParams::new(rho, nu))?;
        write(out, Box::into_raw(Box::new(TbrwParams(params))), "out")
    })
}

/// # Safety
/// `params` must come from a `tbrw_params_*` constructor or be null.
#[no_mangle]
pub unsafe extern "C" fn tbrw_params_free(params: *mut TbrwParams) {
    if !params.is_null() {
        drop(Box::from_raw(params));
    }
}

/// Mean offspring count ν̄; sets `is_infinite` when it diverges.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tbrw_nu_bar(params: *const TbrwParams, out: *mut f64, is_infinite: *mut bool) -> TbrwStatus {
    guard(|| {
        let p = deref(params, "params")?;
        let (value, inf) = match p.0.nu_bar() {
            ExtendedReal::Finite(x) => (x, false),
            ExtendedReal::Infinite => (f64::INFINITY, true),
        };
        write(out, value, "out")?;
        write(is_infinite, inf, "is_infinite")
    })
}

/// Critical bias `1 + 2ν̄`; sets `is_infinite` when ν̄ diverges.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tbrw_critical_rho(params: *const TbrwParams, out: *mut f64, is_infinite: *mut bool) -> TbrwStatus {
    guard(|| {
        let p = deref(params, "params")?;
        let (value, inf) = match critical_rho(&p.0) {
            ExtendedReal::Finite(x) => (x, false),
            ExtendedReal::Infinite => (f64::INFINITY, true),
        };
        write(out, value, "out")?;
        write(is_infinite, inf, "is_infinite")
    })
}

/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tbrw_classify_phase(params: *const TbrwParams, out: *mut TbrwPhase) -> TbrwStatus {
    guard(|| {
        let p = deref(params, "params")?;
        let phase = match classify_phase(&p.0) {
            Phase::Transient => TbrwPhase::Transient,
            Phase::NullRecurrent => TbrwPhase::NullRecurrent,
            Phase::PositiveRecurrent => TbrwPhase::PositiveRecurrent,
        };
        write(out, phase, "out")
    })
}

/// The `l × l` truncation of the mean matrix of the branching chain.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tbrw_mean_matrix_new(params: *const TbrwParams, l: usize, out: *mut *mut TbrwMatrix) -> TbrwStatus {
    guard(|| {
        let p = deref(params, "params")?;
        if l == 0 {
            return Err(invalid("l must be positive"));
        }
        let m = core(mean_matrix_closed_form(&p.0, l))?;
        write(out, Box::into_raw(Box::new(TbrwMatrix(m))), "out")
    })
}

/// # Safety
/// `matrix` must come from `tbrw_mean_matrix_new` or be null.
#[no_mangle]
pub unsafe extern "C" fn tbrw_matrix_free(matrix: *mut TbrwMatrix) {
    if !matrix.is_null() {
        drop(Box::from_raw(matrix));
    }
}

/// Side length, or 0 for a null handle.
///
/// # Safety
/// `matrix` must be a valid handle or null.
#[no_mangle]
pub unsafe extern "C" fn tbrw_matrix_size(matrix: *const TbrwMatrix) -> usize {
    matrix.as_ref().map_or(0, |m| m.0.l)
}

/// Entry `M_{i,j}` with 1-based indices.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tbrw_matrix_get(matrix: *const TbrwMatrix, i: usize, j: usize, out: *mut f64) -> TbrwStatus {
    guard(|| {
        let m = deref(matrix, "matrix")?;
        if i == 0 || j == 0 || i > m.0.l || j > m.0.l {
            return Err(invalid(&format!("index ({i}, {j}) outside 1..={}", m.0.l)));
        }
        write(out, m.0.get(i, j), "out")
    })
}

/// Dominant eigenvalue by power iteration to relative tolerance `tol`.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tbrw_matrix_spectral_radius(matrix: *const TbrwMatrix, tol: f64, out: *mut f64) -> TbrwStatus {
    guard(|| {
        let m = deref(matrix, "matrix")?;
        if tol.is_nan() || tol <= 0.0 {
            return Err(invalid("tol must be positive"));
        }
        write(out, core(spectral_radius(&m.0, tol))?, "out")
    })
}

/// Largest relative residual over `k ≤ k_max` of the left-eigenvector
/// identity for `f(i) = ρ^{-i}`, and its eigenvalue.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tbrw_eigen_check(
    params: *const TbrwParams,
    l: usize,
    k_max: usize,
    residual: *mut f64,
    lambda: *mut f64,
) -> TbrwStatus {
    guard(|| {
        let p = deref(params, "params")?;
        let check = core(eigen_check(&p.0, l, k_max))?;
        write(residual, check.residual, "residual")?;
        write(lambda, check.lambda, "lambda")
    })
}

/// Both sides of the generating-function identity for column `k` at `s`.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tbrw_generating_identity(
    params: *const TbrwParams,
    k: usize,
    s: f64,
    lhs: *mut f64,
    rhs: *mut f64,
) -> TbrwStatus {
    guard(|| {
        let p = deref(params, "params")?;
        let g = core(generating_identity_check(&p.0, k, s, None))?;
        write(lhs, g.lhs, "lhs")?;
        write(rhs, g.rhs, "rhs")
    })
}

/// One urn run up to the `k`-th draw of color 0 on stream `(seed, stream)`:
/// the draw time Θ_k and the number of nonzero colors N_k.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tbrw_urn_run(
    params: *const TbrwParams,
    k: usize,
    seed: u64,
    stream: u64,
    theta_k: *mut u64,
    n_k: *mut u64,
) -> TbrwStatus {
    guard(|| {
        let p = deref(params, "params")?;
        if k == 0 {
            return Err(invalid("k must be positive"));
        }
        let mut rng = RngStream::new(seed, stream).rng();
        let obs = core(run_until_kth_zero(&p.0, k, DEFAULT_URN_STEP_CAP, &mut rng))?;
        write(theta_k, obs.theta_k, "theta_k")?;
        write(n_k, obs.n_k, "n_k")
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tbrw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
