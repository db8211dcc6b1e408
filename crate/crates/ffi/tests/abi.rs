use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use drm_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(drm_last_error()) }.to_string_lossy().into_owned()
}

fn model(omega: f64, gamma: f64, hbar: f64) -> *mut DrmModel {
    let mut m = ptr::null_mut();
    let s = unsafe { drm_model_new(1.0, 1.0, 1.0, omega, gamma, hbar, &mut m) };
    assert_eq!(s, DrmStatus::Ok);
    m
}

#[test]
fn invalid_parameters_report_status_and_message() {
    let mut m = ptr::null_mut();
    let s = unsafe { drm_model_new(-1.0, 1.0, 1.0, 4.0, 0.05, 0.25, &mut m) };
    assert_eq!(s, DrmStatus::InvalidArgument);
    assert!(m.is_null());
    assert!(last_error().contains('G'), "{}", last_error());
}

#[test]
fn null_handles_are_rejected() {
    let mut g = DrmGeometry::default();
    assert_eq!(unsafe { drm_model_geometry(ptr::null(), &mut g) }, DrmStatus::NullPointer);
    let s = unsafe { drm_model_new(1.0, 1.0, 1.0, 4.0, 0.0, 0.25, ptr::null_mut()) };
    assert_eq!(s, DrmStatus::NullPointer);
    assert_eq!(unsafe { drm_density_levels(ptr::null()) }, 0);
    unsafe { drm_model_free(ptr::null_mut()) };
}

#[test]
fn geometry_and_classical_queries() {
    let m = model(4.0, 0.05, 0.25);
    let mut g = DrmGeometry::default();
    assert_eq!(unsafe { drm_model_geometry(m, &mut g) }, DrmStatus::Ok);
    assert_eq!((g.i_plus, g.delta_i_plus, g.has_cycle), (4.0, 4.0, 1));
    assert!((g.gamma_critical - 0.25).abs() < 1e-15);

    let mut det = 0.0;
    assert_eq!(unsafe { drm_map_jacobian_det(m, 0.3, 0.5, 512, &mut det) }, DrmStatus::Ok);
    assert!((det - (-0.05 * std::f64::consts::PI / 2.0).exp()).abs() < 1e-6);

    let mut kind = DrmAttractor::Unresolved;
    assert_eq!(unsafe { drm_classify_basin(m, 0.0, 0.0, &mut kind) }, DrmStatus::Ok);
    assert_eq!(kind, DrmAttractor::FixedPoint0);

    let (mut area, mut exists) = (0.0, 0);
    assert_eq!(unsafe { drm_separatrix_area(m, &mut area, &mut exists) }, DrmStatus::Ok);
    assert_eq!(exists, 1);
    assert!(area > 0.0 && area < 16.0);
    unsafe { drm_model_free(m) };
}

#[test]
fn undamped_classification_is_a_precondition_error() {
    let m = model(4.0, 0.0, 0.25);
    let mut kind = DrmAttractor::Unresolved;
    assert_eq!(unsafe { drm_classify_basin(m, 0.0, 0.0, &mut kind) }, DrmStatus::Precondition);
    unsafe { drm_model_free(m) };
}

#[test]
fn toml_documents_are_parsed() {
    let text = CString::new("[model]\nG = 1.0\nV_plus = 1.0\nV_minus = 0.0\nomega = 4.0\n").unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { drm_model_from_toml(text.as_ptr(), &mut m) }, DrmStatus::Ok);
    unsafe { drm_model_free(m) };
    let bad = CString::new("[model]\nG = \"x\"\n").unwrap();
    assert_eq!(unsafe { drm_model_from_toml(bad.as_ptr(), &mut m) }, DrmStatus::Config);
    assert!(last_error().contains("model.G"), "{}", last_error());
}

#[test]
fn one_period_matches_direct_evolution() {
    let m = model(4.0, 0.05, 0.5);
    let mut u = ptr::null_mut();
    assert_eq!(unsafe { drm_floquet_new(m, -4, 4, 512, &mut u) }, DrmStatus::Ok);
    let dim = unsafe { drm_floquet_dim(u) };
    assert_eq!(dim, 81);

    let (mut re, mut im) = (vec![0.0; dim], vec![0.0; dim]);
    assert_eq!(unsafe { drm_floquet_eigenvalues(u, re.as_mut_ptr(), im.as_mut_ptr(), 3) }, DrmStatus::BufferTooSmall);
    assert_eq!(unsafe { drm_floquet_eigenvalues(u, re.as_mut_ptr(), im.as_mut_ptr(), dim) }, DrmStatus::Ok);
    assert!((re[0] - 1.0).abs() < 1e-10 && im[0].abs() < 1e-10);
    assert!(re.iter().zip(&im).all(|(r, i)| r.hypot(*i) <= 1.0 + 1e-10));

    let mut rho = ptr::null_mut();
    assert_eq!(unsafe { drm_density_pure(-4, 4, 2, &mut rho) }, DrmStatus::Ok);
    let (mut a, mut b) = (ptr::null_mut(), ptr::null_mut());
    assert_eq!(unsafe { drm_floquet_apply(u, rho, &mut a) }, DrmStatus::Ok);
    assert_eq!(unsafe { drm_evolve(m, rho, 1, 512, &mut b) }, DrmStatus::Ok);
    let n = unsafe { drm_density_levels(a) };
    let (mut pa, mut pb) = (vec![0.0; n], vec![0.0; n]);
    unsafe {
        assert_eq!(drm_density_populations(a, pa.as_mut_ptr(), n), DrmStatus::Ok);
        assert_eq!(drm_density_populations(b, pb.as_mut_ptr(), n), DrmStatus::Ok);
    }
    assert!(pa.iter().zip(&pb).all(|(x, y)| (x - y).abs() < 1e-12));
    let (mut tr, mut ti) = (0.0, 0.0);
    assert_eq!(unsafe { drm_density_trace(a, &mut tr, &mut ti) }, DrmStatus::Ok);
    assert!((tr - 1.0).abs() < 1e-10 && ti.abs() < 1e-12);

    let mut other = ptr::null_mut();
    assert_eq!(unsafe { drm_density_pure(-3, 3, 0, &mut other) }, DrmStatus::Ok);
    let mut c = ptr::null_mut();
    assert_eq!(unsafe { drm_floquet_apply(u, other, &mut c) }, DrmStatus::InvalidArgument);
    unsafe {
        for r in [rho, a, b, other] {
            drm_density_free(r);
        }
        drm_floquet_free(u);
        drm_model_free(m);
    }
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(drm_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/drm.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in ["drm_model_new", "drm_floquet_eigenvalues", "DRM_STATUS_OK", "typedef struct DrmModel DrmModel"] {
        assert!(text.contains(sym), "{sym} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(&src, "#include \"drm.h\"\nint main(void) { DrmModel *m = 0; return (int)drm_model_new(1, 1, 1, 4, 0, 0.25, &m); }\n").unwrap();
    let out = match Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .output()
    {
        Ok(o) => o,
        Err(_) => {
            eprintln!("no C compiler, syntax check skipped");
            return;
        }
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
