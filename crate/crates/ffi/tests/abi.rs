use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use tbrw_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(tbrw_last_error_message()) }.to_string_lossy().into_owned()
}

fn point_mass(rho: f64, m: u64) -> *mut TbrwParams {
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { tbrw_params_point_mass(rho, m, &mut p) }, TbrwStatus::Ok);
    assert!(!p.is_null());
    p
}

#[test]
fn phases_and_critical_bias() {
    for (rho, phase) in [
        (2.95, TbrwPhase::Transient),
        (3.0, TbrwPhase::NullRecurrent),
        (3.05, TbrwPhase::PositiveRecurrent),
    ] {
        let p = point_mass(rho, 1);
        let mut out = TbrwPhase::Transient;
        assert_eq!(unsafe { tbrw_classify_phase(p, &mut out) }, TbrwStatus::Ok);
        assert_eq!(out, phase);
        let (mut c, mut inf) = (0.0, true);
        assert_eq!(unsafe { tbrw_critical_rho(p, &mut c, &mut inf) }, TbrwStatus::Ok);
        assert_eq!((c, inf), (3.0, false));
        unsafe { tbrw_params_free(p) };
    }
}

#[test]
fn json_parameters_and_infinite_mean() {
    let json = CString::new(r#"{"rho":5,"nu":{"type":"power_tail","a":0.5}}"#).unwrap();
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { tbrw_params_from_json(json.as_ptr(), &mut p) }, TbrwStatus::Ok);
    let (mut c, mut inf) = (0.0, false);
    assert_eq!(unsafe { tbrw_critical_rho(p, &mut c, &mut inf) }, TbrwStatus::Ok);
    assert!(inf && c.is_infinite());
    let mut phase = TbrwPhase::PositiveRecurrent;
    unsafe { tbrw_classify_phase(p, &mut phase) };
    assert_eq!(phase, TbrwPhase::Transient);
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { tbrw_mean_matrix_new(p, 10, &mut m) }, TbrwStatus::Precondition);
    assert!(last_error().contains("infinite mean"));
    unsafe { tbrw_params_free(p) };

    let bad = CString::new(r#"{"rho":-1,"nu":{"type":"point_mass","m":1}}"#).unwrap();
    let mut q = ptr::null_mut();
    assert_eq!(unsafe { tbrw_params_from_json(bad.as_ptr(), &mut q) }, TbrwStatus::Precondition);
    assert!(q.is_null());
}

#[test]
fn matrix_handle() {
    let p = point_mass(3.0, 1);
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { tbrw_mean_matrix_new(p, 40, &mut m) }, TbrwStatus::Ok);
    assert_eq!(unsafe { tbrw_matrix_size(m) }, 40);
    let mut v = 0.0;
    assert_eq!(unsafe { tbrw_matrix_get(m, 1, 1, &mut v) }, TbrwStatus::Ok);
    assert!((v - 9.0 / 32.0).abs() < 1e-14);
    assert_eq!(unsafe { tbrw_matrix_get(m, 0, 1, &mut v) }, TbrwStatus::InvalidArgument);
    assert!(last_error().contains("outside"));
    unsafe { tbrw_matrix_free(m) };

    let q = point_mass(4.0, 1);
    let mut m = ptr::null_mut();
    unsafe { tbrw_mean_matrix_new(q, 80, &mut m) };
    let mut r = 0.0;
    assert_eq!(unsafe { tbrw_matrix_spectral_radius(m, 1e-12, &mut r) }, TbrwStatus::Ok);
    assert!((r - 0.5).abs() < 1e-4);
    unsafe {
        tbrw_matrix_free(m);
        tbrw_params_free(p);
        tbrw_params_free(q);
        tbrw_matrix_free(ptr::null_mut());
    }
}

#[test]
fn identities() {
    let p = point_mass(4.0, 1);
    let (mut residual, mut lambda) = (1.0, 0.0);
    assert_eq!(unsafe { tbrw_eigen_check(p, 60, 20, &mut residual, &mut lambda) }, TbrwStatus::Ok);
    assert!(residual < 1e-9);
    assert_eq!(lambda, 0.5);
    let (mut lhs, mut rhs) = (0.0, 0.0);
    assert_eq!(unsafe { tbrw_generating_identity(p, 3, 0.5, &mut lhs, &mut rhs) }, TbrwStatus::Ok);
    assert!((lhs - rhs).abs() / rhs < 1e-8);
    assert_eq!(unsafe { tbrw_generating_identity(p, 3, 0.9, &mut lhs, &mut rhs) }, TbrwStatus::Precondition);
    assert!(last_error().starts_with("s_out_of_range"));
    unsafe { tbrw_params_free(p) };

    let low = point_mass(1.5, 1);
    assert_eq!(unsafe { tbrw_eigen_check(low, 30, 5, &mut residual, &mut lambda) }, TbrwStatus::Precondition);
    assert!(last_error().starts_with("requires_rho_gt_one_plus_nubar"));
    unsafe { tbrw_params_free(low) };
}

#[test]
fn urn_runs_are_reproducible() {
    let p = point_mass(3.0, 1);
    let run = |seed, stream| {
        let (mut theta, mut n) = (0, 0);
        assert_eq!(unsafe { tbrw_urn_run(p, 2, seed, stream, &mut theta, &mut n) }, TbrwStatus::Ok);
        (theta, n)
    };
    assert_eq!(run(9, 1), run(9, 1));
    let (theta, n) = run(9, 1);
    // ν = δ_1 adds one color per step
    assert_eq!(theta, n);
    let (mut theta, mut n) = (0, 0);
    assert_eq!(unsafe { tbrw_urn_run(p, 0, 1, 1, &mut theta, &mut n) }, TbrwStatus::InvalidArgument);
    unsafe { tbrw_params_free(p) };
}

#[test]
fn null_pointers_are_rejected() {
    let mut out = TbrwPhase::Transient;
    assert_eq!(unsafe { tbrw_classify_phase(ptr::null(), &mut out) }, TbrwStatus::InvalidArgument);
    assert_eq!(last_error(), "params is null");
    assert_eq!(unsafe { tbrw_params_point_mass(2.0, 1, ptr::null_mut()) }, TbrwStatus::InvalidArgument);
    assert_eq!(unsafe { tbrw_matrix_size(ptr::null()) }, 0);
    let p = point_mass(2.0, 1);
    assert_eq!(unsafe { tbrw_classify_phase(p, &mut out) }, TbrwStatus::Ok);
    assert_eq!(last_error(), "");
    unsafe { tbrw_params_free(p) };
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(tbrw_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include").join("tbrw.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["tbrw_params_point_mass", "tbrw_mean_matrix_new", "tbrw_urn_run", "TBRW_STATUS_OK", "typedef struct TbrwParams TbrwParams"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping syntax check");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"tbrw.h\"\nint main(void) {\n  TbrwParams *p = 0;\n  TbrwPhase ph;\n  if (tbrw_params_point_mass(3.0, 1, &p) != TBRW_STATUS_OK) return 1;\n  tbrw_classify_phase(p, &ph);\n  tbrw_params_free(p);\n  return ph == TBRW_PHASE_NULL_RECURRENT ? 0 : 1;\n}\n",
    )
    .unwrap();
    let status = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .status()
        .unwrap();
    assert!(status.success());
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok())
        .ok_or(())
}
