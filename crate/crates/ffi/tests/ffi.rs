use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::ptr;

use iam_ffi::*;

fn calib() -> CString {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/calib/dice2016.toml");
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(iam_last_error()) }
        .to_string_lossy()
        .into_owned()
}

#[test]
fn solve_and_read_series() {
    unsafe {
        let mut cal = ptr::null_mut();
        assert_eq!(iam_calibration_load(calib().as_ptr(), &mut cal), IamStatus::IamOk);
        let mut sol = ptr::null_mut();
        assert_eq!(iam_det_solve(cal, 60, 0.0, &mut sol), IamStatus::IamOk);
        assert_eq!(iam_det_periods(sol), 60);
        let mut w = 0.0;
        assert_eq!(iam_det_welfare(sol, &mut w), IamStatus::IamOk);
        assert!(w.is_finite());

        let name = CString::new("SCC").unwrap();
        let mut len = 0;
        assert_eq!(
            iam_det_series(sol, name.as_ptr(), ptr::null_mut(), 0, &mut len),
            IamStatus::IamBufferTooSmall
        );
        assert_eq!(len, 60);
        let mut buf = vec![0.0; len];
        assert_eq!(
            iam_det_series(sol, name.as_ptr(), buf.as_mut_ptr(), buf.len(), &mut len),
            IamStatus::IamOk
        );
        assert!(buf[0] > 0.0 && buf[1] > buf[0]);
        assert_eq!(last_error(), "");

        let bogus = CString::new("GDP").unwrap();
        assert_eq!(
            iam_det_series(sol, bogus.as_ptr(), buf.as_mut_ptr(), buf.len(), &mut len),
            IamStatus::IamInvalidArgument
        );
        assert!(last_error().contains("GDP"));

        let beta = CString::new("beta_annual").unwrap();
        assert_eq!(iam_calibration_set(cal, beta.as_ptr(), 0.999), IamStatus::IamOk);
        let mut patient = ptr::null_mut();
        assert_eq!(iam_det_solve(cal, 60, 0.0, &mut patient), IamStatus::IamOk);
        let mut buf2 = vec![0.0; 60];
        assert_eq!(
            iam_det_series(patient, name.as_ptr(), buf2.as_mut_ptr(), 60, &mut len),
            IamStatus::IamOk
        );
        assert!(buf2[0] > buf[0]);

        iam_det_free(patient);
        iam_det_free(sol);
        iam_calibration_free(cal);
    }
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let mut cal = ptr::null_mut();
        let missing = CString::new("/no/such/calibration.toml").unwrap();
        assert_eq!(iam_calibration_load(missing.as_ptr(), &mut cal), IamStatus::IamConfig);
        assert!(cal.is_null());
        assert!(last_error().contains("calibration.toml"));

        assert_eq!(iam_calibration_load(ptr::null(), &mut cal), IamStatus::IamNullArgument);
        assert_eq!(
            iam_calibration_load(calib().as_ptr(), ptr::null_mut()),
            IamStatus::IamNullArgument
        );

        let bad = CString::new("[params]\nbeta = 0.9\n").unwrap();
        assert_eq!(iam_calibration_parse(bad.as_ptr(), &mut cal), IamStatus::IamConfig);

        assert_eq!(iam_calibration_load(calib().as_ptr(), &mut cal), IamStatus::IamOk);
        let name = CString::new("no_such_param").unwrap();
        assert_eq!(iam_calibration_set(cal, name.as_ptr(), 1.0), IamStatus::IamConfig);
        let mut sol = ptr::null_mut();
        assert_eq!(iam_det_solve(cal, 0, 0.0, &mut sol), IamStatus::IamConfig);
        assert_eq!(iam_det_solve(cal, 30, 1e-30, &mut sol), IamStatus::IamNumerical);
        assert!(sol.is_null());
        iam_calibration_free(cal);
        iam_calibration_free(ptr::null_mut());
        iam_det_free(ptr::null_mut());
        assert!(!CStr::from_ptr(iam_version()).to_bytes().is_empty());
    }
}

#[test]
fn c_program_links_against_the_header() {
    let here = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libiam_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "iam.h"
int main(int argc, char **argv) {
    IamCalibration *cal = NULL;
    IamDetSolution *sol = NULL;
    if (iam_calibration_load(argv[1], &cal) != IAM_OK) { fprintf(stderr, "%s\n", iam_last_error()); return 3; }
    if (iam_det_solve(cal, 40, 0.0, &sol) != IAM_OK) { fprintf(stderr, "%s\n", iam_last_error()); return 4; }
    double scc[40];
    size_t len = 0;
    if (iam_det_series(sol, "SCC", scc, 40, &len) != IAM_OK || len != 40) return 5;
    printf("%.6f\n", scc[0]);
    iam_det_free(sol);
    iam_calibration_free(cal);
    return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("smoke");
    let status = std::process::Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(here.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .expect("a C compiler on PATH");
    assert!(status.success());
    let out = std::process::Command::new(&bin)
        .arg(calib().to_str().unwrap())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let scc: f64 = String::from_utf8_lossy(&out.stdout).trim().parse().unwrap();
    assert!(scc > 0.0);
}
