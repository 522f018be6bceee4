use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use aft_ffi::*;

fn last_error() -> String {
    let p = aft_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn manifest() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

// Three clusters of two; log T = 0.5 x + noise, no censoring except one row.
fn small_arrays() -> (Vec<i64>, Vec<f64>, Vec<u8>, Vec<f64>) {
    let cluster = vec![7, 7, 3, 3, 9, 9, 4, 4];
    let x: Vec<f64> = vec![0.1, -0.4, 1.2, 0.3, -1.0, 0.8, 0.0, 0.5];
    let noise = [0.2, -0.1, 0.05, -0.3, 0.15, 0.1, -0.2, 0.25];
    let time = x.iter().zip(noise).map(|(x, e)| (0.5 * x + e).exp()).collect();
    let event = vec![1, 1, 0, 1, 1, 1, 1, 0];
    (cluster, time, event, x)
}

unsafe fn dataset() -> *mut AftDataset {
    let (c, t, e, x) = small_arrays();
    let mut out = ptr::null_mut();
    let st = aft_dataset_new(c.len(), 1, c.as_ptr(), t.as_ptr(), e.as_ptr(), x.as_ptr(), &mut out);
    assert_eq!(st, AftStatus::Ok, "{}", last_error());
    out
}

#[test]
fn arrays_round_trip_through_fit() {
    unsafe {
        let ds = dataset();
        assert_eq!(aft_dataset_n_clusters(ds), 4);
        assert_eq!(aft_dataset_n_obs(ds), 8);
        assert_eq!(aft_dataset_p(ds), 1);

        let mut opts = aft_fit_options_default();
        opts.variant = AftVariant::Weighted as u32;
        let mut fit = ptr::null_mut();
        assert_eq!(aft_fit(ds, &opts, &mut fit), AftStatus::Ok, "{}", last_error());
        assert_eq!(aft_fit_p(fit), 1);
        let mut beta = [f64::NAN];
        let mut se = [f64::NAN];
        let mut sigma = [f64::NAN];
        assert_eq!(aft_fit_beta(fit, beta.as_mut_ptr(), 1), AftStatus::Ok);
        assert_eq!(aft_fit_std_errors(fit, se.as_mut_ptr(), 1), AftStatus::Ok);
        assert_eq!(aft_fit_sigma(fit, sigma.as_mut_ptr(), 1), AftStatus::Ok);
        assert!(beta[0].is_finite());
        assert!(se[0] > 0.0);
        assert!((se[0] * se[0] * 4.0 - sigma[0]).abs() < 1e-12 * sigma[0].max(1.0));
        assert!(aft_fit_rho_bar(fit).is_finite());
        assert!(aft_fit_iterations(fit) >= 1);
        aft_fit_free(fit);
        aft_dataset_free(ds);
    }
}

#[test]
fn gehan_has_no_rho_bar() {
    unsafe {
        let ds = dataset();
        let mut opts = aft_fit_options_default();
        opts.variant = AftVariant::Gehan as u32;
        let mut fit = ptr::null_mut();
        assert_eq!(aft_fit(ds, &opts, &mut fit), AftStatus::Ok, "{}", last_error());
        assert!(aft_fit_rho_bar(fit).is_nan());
        aft_fit_free(fit);
        aft_dataset_free(ds);
    }
}

#[test]
fn errors_are_reported_not_panicked() {
    unsafe {
        let mut fit = ptr::null_mut();
        assert_eq!(aft_fit(ptr::null(), ptr::null(), &mut fit), AftStatus::NullPointer);
        assert!(fit.is_null());
        assert!(last_error().contains("dataset"));

        let ds = dataset();
        let mut opts = aft_fit_options_default();
        opts.scheme = 42;
        assert_eq!(aft_fit(ds, &opts, &mut fit), AftStatus::InvalidArgument);
        assert!(last_error().contains("42"));

        opts = aft_fit_options_default();
        assert_eq!(aft_fit(ds, &opts, &mut fit), AftStatus::Ok);
        let mut small = [0.0f64; 0];
        assert_eq!(aft_fit_beta(fit, small.as_mut_ptr(), 0), AftStatus::BufferTooSmall);
        aft_fit_free(fit);
        aft_dataset_free(ds);

        let (c, mut t, e, x) = small_arrays();
        t[2] = -1.0;
        let mut out = ptr::null_mut();
        let st = aft_dataset_new(c.len(), 1, c.as_ptr(), t.as_ptr(), e.as_ptr(), x.as_ptr(), &mut out);
        assert_eq!(st, AftStatus::DataError);
        assert!(out.is_null());
        assert!(last_error().contains("row 3"));

        aft_dataset_free(ptr::null_mut());
        aft_fit_free(ptr::null_mut());
        assert_eq!(aft_fit_p(ptr::null()), 0);
    }
}

#[test]
fn csv_loader_matches_core() {
    let path = CString::new(manifest().join("../core/data/hiv_like.csv").to_str().unwrap()).unwrap();
    let s = |v: &str| CString::new(v).unwrap();
    let (cl, ti, ev, cov) = (s("patient"), s("Time"), s("death"), s("CD4, obstime,drug,gender,prevOI,AZT"));
    unsafe {
        let mut ds = ptr::null_mut();
        let st = aft_dataset_from_csv(path.as_ptr(), cl.as_ptr(), ti.as_ptr(), ev.as_ptr(), cov.as_ptr(), &mut ds);
        assert_eq!(st, AftStatus::Ok, "{}", last_error());
        assert_eq!(aft_dataset_p(ds), 6);
        assert_eq!(aft_dataset_n_clusters(ds), 180);
        aft_dataset_free(ds);

        let bad = s("nope");
        let st = aft_dataset_from_csv(path.as_ptr(), bad.as_ptr(), ti.as_ptr(), ev.as_ptr(), cov.as_ptr(), &mut ds);
        assert_eq!(st, AftStatus::DataError);
        assert!(last_error().contains("nope"));

        let missing = s("/nonexistent/file.csv");
        let st = aft_dataset_from_csv(missing.as_ptr(), cl.as_ptr(), ti.as_ptr(), ev.as_ptr(), cov.as_ptr(), &mut ds);
        assert_eq!(st, AftStatus::IoError);
    }
}

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(aft_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_symbol() {
    let header = std::fs::read_to_string(manifest().join("include/aft_ffi.h")).unwrap();
    for sym in [
        "aft_last_error_message",
        "aft_version",
        "aft_dataset_new",
        "aft_dataset_from_csv",
        "aft_dataset_free",
        "aft_dataset_n_clusters",
        "aft_dataset_n_obs",
        "aft_dataset_p",
        "aft_fit_options_default",
        "aft_fit(",
        "aft_fit_free",
        "aft_fit_p",
        "aft_fit_beta",
        "aft_fit_std_errors",
        "aft_fit_sigma",
        "aft_fit_rho_bar",
        "aft_fit_converged",
        "aft_fit_iterations",
        "AFT_STATUS_BUFFER_TOO_SMALL",
        "typedef struct AftDataset AftDataset",
    ] {
        assert!(header.contains(sym), "header lacks {sym}");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = which_cc() else { return };
    let src = "#include \"aft_ffi.h\"\nint main(void) { AftFitOptions o = aft_fit_options_default(); return (int)o.variant; }\n";
    let dir = std::env::temp_dir().join(format!("aft_ffi_hdr_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let file = dir.join("probe.c");
    std::fs::write(&file, src).unwrap();
    let status = Command::new(cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-fsyntax-only")
        .arg("-I")
        .arg(manifest().join("include"))
        .arg(&file)
        .status()
        .unwrap();
    std::fs::remove_dir_all(&dir).ok();
    assert!(status.success());
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
        .ok_or(())
}
