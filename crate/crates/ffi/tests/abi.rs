use std::ffi::{c_char, CString};
use std::ptr;

use tv_euler_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    let n = unsafe { tve_last_error_message(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(255)].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

#[test]
fn scalar_functions() {
    let mut out = 0.0;
    assert_eq!(unsafe { tve_theoretical_ratio(1.0, 0.125, &mut out) }, TveStatus::Ok);
    assert!((out - 1.632_535).abs() < 1e-6);
    assert_eq!(
        unsafe { tve_bang_bang_density(0.0, 1.0, 0.0, 0.0, &mut out) },
        TveStatus::Ok
    );
    assert!((out - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-14);
    assert_eq!(
        unsafe { tve_bang_bang_density(1.0, -1.0, 0.0, 0.0, &mut out) },
        TveStatus::Domain
    );
    assert!(last_error().contains("t > 0"));
    assert_eq!(
        unsafe { tve_theoretical_ratio(1.0, 0.5, ptr::null_mut()) },
        TveStatus::NullPointer
    );
    let x = [0.0, 1.0, 2.0];
    let f = [1.0, 1.0, 1.0];
    let g = [0.0, 0.0, 0.0];
    assert_eq!(
        unsafe { tve_trapezoid_l1(x.as_ptr(), f.as_ptr(), g.as_ptr(), 3, &mut out) },
        TveStatus::Ok
    );
    assert_eq!(out, 2.0);
}

#[test]
fn error_message_truncates_and_reports_length() {
    let mut out = 0.0;
    unsafe { tve_theoretical_ratio(1.0, 2.0, &mut out) };
    let full = unsafe { tve_last_error_message(ptr::null_mut(), 0) };
    let mut small = [0 as c_char; 8];
    let n = unsafe { tve_last_error_message(small.as_mut_ptr(), small.len()) };
    assert_eq!(n, full);
    assert!(full > 8);
    assert_eq!(small[7], 0);
}

#[test]
fn sample_and_kde_handles() {
    let drift = CString::new("kind = \"bang-bang\"\ntheta = 1.0").unwrap();
    let mut sample = ptr::null_mut();
    let status = unsafe { tve_sample_new(drift.as_ptr(), 0.0, 1.0, 1.0 / 64.0, 20_000, 3, &mut sample) };
    assert_eq!(status, TveStatus::Ok);
    let n = unsafe { tve_sample_len(sample) };
    assert_eq!(n, 20_000);
    let values = unsafe { std::slice::from_raw_parts(tve_sample_values(sample), n) };
    let mean = values.iter().sum::<f64>() / n as f64;
    assert!(mean.abs() < 0.05, "{mean}");

    let mut kde = ptr::null_mut();
    let status = unsafe { tve_kde_new(values.as_ptr(), n, TveKernel::Gaussian, 0.0, 0.0, &mut kde) };
    assert_eq!(status, TveStatus::Ok);
    let mut count = 0usize;
    assert_eq!(
        unsafe { tve_kde_bandwidths(kde, ptr::null_mut(), 0, &mut count) },
        TveStatus::BufferTooSmall
    );
    assert_eq!(count, 1);
    let mut bw = [0.0; 2];
    assert_eq!(
        unsafe { tve_kde_bandwidths(kde, bw.as_mut_ptr(), 2, &mut count) },
        TveStatus::Ok
    );
    assert!(bw[0] > 0.0);
    // Integral of the KDE over a wide grid is one.
    let xs: Vec<f64> = (0..4001).map(|i| -8.0 + 16.0 * i as f64 / 4000.0).collect();
    let mut dens = vec![0.0; xs.len()];
    assert_eq!(
        unsafe { tve_kde_evaluate(kde, xs.as_ptr(), xs.len(), dens.as_mut_ptr()) },
        TveStatus::Ok
    );
    let mass: f64 = dens.iter().sum::<f64>() * 16.0 / 4000.0;
    assert!((mass - 1.0).abs() < 1e-3, "{mass}");
    unsafe {
        tve_kde_free(kde);
        tve_sample_free(sample);
        tve_kde_free(ptr::null_mut());
        tve_sample_free(ptr::null_mut());
    }
}

#[test]
fn bad_inputs_leave_null_handles() {
    let drift = CString::new("kind = \"warp\"").unwrap();
    let mut sample = ptr::null_mut();
    let status = unsafe { tve_sample_new(drift.as_ptr(), 0.0, 1.0, 0.3, 100, 1, &mut sample) };
    assert_eq!(status, TveStatus::Config);
    assert!(sample.is_null());
    let ok = CString::new("kind = \"zero\"").unwrap();
    let status = unsafe { tve_sample_new(ok.as_ptr(), 0.0, 1.0, 0.3, 100, 1, &mut sample) };
    assert_eq!(status, TveStatus::Domain, "{}", last_error());
    assert!(sample.is_null());
    let mut kde = ptr::null_mut();
    let xs = [1.0, 2.0, 3.0];
    assert_eq!(
        unsafe { tve_kde_new(xs.as_ptr(), 3, TveKernel::Epanechnikov, f64::NAN, 0.0, &mut kde) },
        TveStatus::Domain
    );
    assert_eq!(unsafe { tve_sample_len(ptr::null()) }, 0);
}

#[test]
fn runs_a_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("tiny.toml");
    std::fs::write(
        &config,
        r#"
name = "tiny"
x0 = 0.0
horizon = 1.0
steps = [2, 4, 8]
n_samples = 2000
runs = 2
kernel = "epanechnikov"
mode = "vs-exact"
master_seed = 1

[drift]
kind = "bang-bang"
theta = 1.0

[bandwidth]
rule = "mise-optimal"
"#,
    )
    .unwrap();
    let path = CString::new(config.to_str().unwrap()).unwrap();
    let out = CString::new(dir.path().join("out").to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { tve_run_experiment(path.as_ptr(), out.as_ptr()) },
        TveStatus::Ok,
        "{}",
        last_error()
    );
    let csv = std::fs::read_to_string(dir.path().join("out/tiny.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    let missing = CString::new("/nonexistent/config.toml").unwrap();
    assert_eq!(
        unsafe { tve_run_experiment(missing.as_ptr(), ptr::null()) },
        TveStatus::Io
    );
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/tv_euler.h")).unwrap();
    for name in [
        "tve_last_error_message",
        "tve_bang_bang_density",
        "tve_sample_new",
        "tve_kde_evaluate",
        "tve_run_experiment",
        "TVE_STATUS_OK",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
