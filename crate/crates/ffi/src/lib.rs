//! C ABI for `tv-euler`.
//!
//! Every function returns a [`TveStatus`]; results go through out-pointers.
//! On failure the message is kept per thread and can be copied out with
//! [`tve_last_error_message`]. Handles are opaque and must be released with
//! their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use tv_euler::exact::bang_bang_density;
use tv_euler::experiment::{emit_outputs, run_experiment, ExperimentConfig};
use tv_euler::kde::{BandwidthRule, KdeModel, KernelSpec};
use tv_euler::metrics::trapezoid_l1;
use tv_euler::sampler::{sample_endpoints, EndpointSample, SamplerConfig};
use tv_euler::{DriftConfig, Error, SdeProblem};

/// Result code of every exported function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TveStatus {
    Ok = 0,
    NullPointer = 1,
    /// Argument outside the domain of the operation.
    Domain = 2,
    Config = 3,
    Io = 4,
    /// Quadrature, solver or mass-conservation failure.
    Numerical = 5,
    BufferTooSmall = 6,
    /// Some row of an experiment failed; results were still written.
    InvalidRow = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TveKernel {
    Epanechnikov = 0,
    Gaussian = 1,
}

/// Endpoint sample of the randomized-time Euler scheme.
pub struct TveSample {
    inner: EndpointSample,
}

/// Fitted kernel density estimate.
pub struct TveKde {
    inner: KdeModel,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(err: &Error) -> TveStatus {
    match err {
        Error::Domain(_) | Error::Range { .. } | Error::Hypothesis { .. } => TveStatus::Domain,
        Error::Config(_) | Error::Parse { .. } => TveStatus::Config,
        Error::Io { .. } => TveStatus::Io,
        Error::Singular { .. }
        | Error::Capacity { .. }
        | Error::Quadrature { .. }
        | Error::Coverage { .. }
        | Error::NoConvergence { .. }
        | Error::MassDrift { .. } => TveStatus::Numerical,
    }
}

fn fail(status: TveStatus, msg: impl Into<String>) -> TveStatus {
    set_error(msg);
    status
}

fn guard<F: FnOnce() -> Result<(), TveStatus>>(f: F) -> TveStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TveStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => fail(TveStatus::Panic, "internal panic"),
    }
}

fn lift<T>(r: tv_euler::Result<T>) -> Result<T, TveStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

fn nonnull<T>(p: *const T, name: &str) -> Result<(), TveStatus> {
    if p.is_null() {
        Err(fail(TveStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

unsafe fn c_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, TveStatus> {
    nonnull(p, name)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(TveStatus::Domain, format!("{name} is not valid UTF-8")))
}

unsafe fn slice<'a>(p: *const f64, n: usize, name: &str) -> Result<&'a [f64], TveStatus> {
    if n == 0 {
        return Ok(&[]);
    }
    nonnull(p, name)?;
    Ok(std::slice::from_raw_parts(p, n))
}

/// Copies the calling thread's last error message, NUL-terminated and
/// truncated to `capacity` bytes, and returns the full message length
/// (excluding the NUL). A null `buffer` only queries the length.
///
/// # Safety
/// `buffer` must be null or writable for `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn tve_last_error_message(buffer: *mut c_char, capacity: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buffer.is_null() && capacity > 0 {
            let n = msg.len().min(capacity - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buffer, n);
            *buffer.add(n) = 0;
        }
        msg.len()
    })
}

/// Transition density at `z` of Brownian motion with drift `-theta sgn`
/// started at `x`, after time `t`.
///
/// # Safety
/// `out` must be null or valid for writing one `double`.
#[no_mangle]
pub unsafe extern "C" fn tve_bang_bang_density(theta: f64, t: f64, x: f64, z: f64, out: *mut f64) -> TveStatus {
    guard(|| {
        nonnull(out, "out")?;
        *out = lift(bang_bang_density(theta, t, x, z))?;
        Ok(())
    })
}

/// `2 (1 + ln(T/h)) / (1 + ln(2T/h))`.
///
/// # Safety
/// `out` must be null or valid for writing one `double`.
#[no_mangle]
pub unsafe extern "C" fn tve_theoretical_ratio(horizon: f64, h: f64, out: *mut f64) -> TveStatus {
    guard(|| {
        nonnull(out, "out")?;
        *out = lift(tv_euler::convergence::theoretical_ratio(horizon, h))?;
        Ok(())
    })
}

/// Trapezoidal L1 distance between `f` and `g` on sorted abscissae `x`.
///
/// # Safety
/// `x`, `f`, `g` must be readable for `n` doubles; `out` writable for one.
#[no_mangle]
pub unsafe extern "C" fn tve_trapezoid_l1(
    x: *const f64,
    f: *const f64,
    g: *const f64,
    n: usize,
    out: *mut f64,
) -> TveStatus {
    guard(|| {
        nonnull(out, "out")?;
        let (x, f, g) = (slice(x, n, "x")?, slice(f, n, "f")?, slice(g, n, "g")?);
        *out = lift(trapezoid_l1(x, f, g))?;
        Ok(())
    })
}

/// Simulates `n_samples` endpoints at time `horizon` from `x0` with step
/// `h`. `drift_toml` describes the drift in the experiment config format,
/// for example `kind = "two-valued"\nalpha = -3.0\nbeta = 4.0`.
///
/// # Safety
/// `drift_toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tve_sample_new(
    drift_toml: *const c_char,
    x0: f64,
    horizon: f64,
    h: f64,
    n_samples: usize,
    seed: u64,
    out: *mut *mut TveSample,
) -> TveStatus {
    guard(|| {
        nonnull(out, "out")?;
        *out = ptr::null_mut();
        let text = c_str(drift_toml, "drift_toml")?;
        let drift: DriftConfig = toml::from_str(text).map_err(|e| fail(TveStatus::Config, e.to_string()))?;
        let problem = lift(drift.build().and_then(|d| SdeProblem::from_point(d, vec![x0], horizon)))?;
        let cfg = lift(SamplerConfig::new(problem, h, n_samples, seed))?;
        let inner = lift(sample_endpoints(&cfg))?;
        *out = Box::into_raw(Box::new(TveSample { inner }));
        Ok(())
    })
}

/// Number of stored values (samples times dimension).
///
/// # Safety
/// `sample` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tve_sample_len(sample: *const TveSample) -> usize {
    sample.as_ref().map_or(0, |s| s.inner.values.len())
}

/// Borrowed pointer to the values, valid until the handle is freed.
///
/// # Safety
/// `sample` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tve_sample_values(sample: *const TveSample) -> *const f64 {
    sample.as_ref().map_or(ptr::null(), |s| s.inner.values.as_ptr())
}

/// # Safety
/// `sample` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tve_sample_free(sample: *mut TveSample) {
    if !sample.is_null() {
        drop(Box::from_raw(sample));
    }
}

/// Fits a KDE to `n` values. A positive `bandwidth` is used as is; zero
/// selects Silverman's rule and a negative value Silverman per side of
/// `split_point`.
///
/// # Safety
/// `values` must be readable for `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tve_kde_new(
    values: *const f64,
    n: usize,
    kernel: TveKernel,
    bandwidth: f64,
    split_point: f64,
    out: *mut *mut TveKde,
) -> TveStatus {
    guard(|| {
        nonnull(out, "out")?;
        *out = ptr::null_mut();
        let xs = slice(values, n, "values")?;
        let spec = match kernel {
            TveKernel::Epanechnikov => KernelSpec::epanechnikov(),
            TveKernel::Gaussian => KernelSpec::gaussian(),
        };
        let rule = if bandwidth > 0.0 {
            BandwidthRule::Fixed(bandwidth)
        } else if bandwidth == 0.0 {
            BandwidthRule::Silverman
        } else if bandwidth < 0.0 {
            BandwidthRule::SilvermanPerMode { split_point }
        } else {
            return Err(fail(TveStatus::Domain, "bandwidth is NaN"));
        };
        let inner = lift(KdeModel::fit(xs, spec, &rule))?;
        *out = Box::into_raw(Box::new(TveKde { inner }));
        Ok(())
    })
}

/// Evaluates the KDE at `n` points into `out`.
///
/// # Safety
/// `kde` must be a live handle, `x` readable and `out` writable for `n`
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn tve_kde_evaluate(kde: *const TveKde, x: *const f64, n: usize, out: *mut f64) -> TveStatus {
    guard(|| {
        nonnull(kde, "kde")?;
        let xs = slice(x, n, "x")?;
        if n == 0 {
            return Ok(());
        }
        nonnull(out, "out")?;
        let values = (*kde).inner.evaluate_many(xs);
        ptr::copy_nonoverlapping(values.as_ptr(), out, n);
        Ok(())
    })
}

/// Copies the per-component bandwidths into `out` and stores their count
/// in `count`. Fails with `BufferTooSmall` (count still set) when
/// `capacity` is too small.
///
/// # Safety
/// `kde` must be a live handle, `out` writable for `capacity` doubles and
/// `count` for one `size_t`.
#[no_mangle]
pub unsafe extern "C" fn tve_kde_bandwidths(
    kde: *const TveKde,
    out: *mut f64,
    capacity: usize,
    count: *mut usize,
) -> TveStatus {
    guard(|| {
        nonnull(kde, "kde")?;
        nonnull(count, "count")?;
        let bw = (*kde).inner.bandwidths();
        *count = bw.len();
        if capacity < bw.len() {
            return Err(fail(
                TveStatus::BufferTooSmall,
                format!("need room for {} bandwidths", bw.len()),
            ));
        }
        nonnull(out, "out")?;
        ptr::copy_nonoverlapping(bw.as_ptr(), out, bw.len());
        Ok(())
    })
}

/// # Safety
/// `kde` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tve_kde_free(kde: *mut TveKde) {
    if !kde.is_null() {
        drop(Box::from_raw(kde));
    }
}

/// Runs the experiment config at `config_path` and writes its result
/// files into `out_dir` (the config's own output directory when null).
/// Returns `InvalidRow` when some row failed.
///
/// # Safety
/// `config_path` must be a NUL-terminated string, `out_dir` null or one.
#[no_mangle]
pub unsafe extern "C" fn tve_run_experiment(config_path: *const c_char, out_dir: *const c_char) -> TveStatus {
    guard(|| {
        let path = c_str(config_path, "config_path")?;
        let cfg = lift(ExperimentConfig::load(path))?;
        let dir = if out_dir.is_null() {
            cfg.output.dir.clone().unwrap_or_else(|| PathBuf::from("."))
        } else {
            PathBuf::from(c_str(out_dir, "out_dir")?)
        };
        let report = lift(run_experiment(&cfg))?;
        lift(emit_outputs(&report, &dir, cfg.output_stem()))?;
        if report.all_rows_valid() {
            Ok(())
        } else {
            let msg = report.rows.iter().find_map(|r| r.error.clone()).unwrap_or_default();
            Err(fail(TveStatus::InvalidRow, msg))
        }
    })
}
