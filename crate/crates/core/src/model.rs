//! Drift coefficients and SDE problems `X_t = X_0 + W_t + \int_0^t b(s, X_s) ds`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::DensityGrid;

/// Evaluates a drift in place: `f(t, x, out)` writes `b(t, x)` into `out`.
pub type DriftFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

/// Named custom drifts that can be written back to a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case")]
pub enum DriftPreset {
    /// `height` times the indicator of a Smith-Volterra-Cantor set on `[lo, hi]`
    /// truncated after `depth` removal stages.
    FatCantor { depth: u32, lo: f64, hi: f64, height: f64 },
}

#[derive(Clone)]
pub struct CustomDrift {
    pub label: String,
    pub preset: Option<DriftPreset>,
    eval: DriftFn,
}

impl fmt::Debug for CustomDrift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomDrift")
            .field("label", &self.label)
            .field("preset", &self.preset)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub enum DriftKind {
    /// `alpha` on `(-inf, 0)`, `beta` on `[0, inf)`.
    TwoValued {
        alpha: f64,
        beta: f64,
    },
    /// `-theta * sgn(x)` with `sgn(0) = +1`.
    BangBang {
        theta: f64,
    },
    Zero,
    Constant(Vec<f64>),
    Custom(CustomDrift),
}

/// A bounded drift coefficient with its sup-norm bound and state dimension.
#[derive(Debug, Clone)]
pub struct DriftSpec {
    kind: DriftKind,
    bound: f64,
    dimension: usize,
}

impl DriftSpec {
    pub fn two_valued(alpha: f64, beta: f64) -> Result<Self> {
        if !alpha.is_finite() || !beta.is_finite() {
            return Err(Error::domain("two-valued drift levels must be finite"));
        }
        Ok(DriftSpec {
            kind: DriftKind::TwoValued { alpha, beta },
            bound: alpha.abs().max(beta.abs()),
            dimension: 1,
        })
    }

    pub fn bang_bang(theta: f64) -> Result<Self> {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::domain(format!("bang-bang theta must be positive, got {theta}")));
        }
        Ok(DriftSpec {
            kind: DriftKind::BangBang { theta },
            bound: theta,
            dimension: 1,
        })
    }

    pub fn zero(dimension: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::domain("dimension must be positive"));
        }
        Ok(DriftSpec {
            kind: DriftKind::Zero,
            bound: 0.0,
            dimension,
        })
    }

    pub fn constant(c: Vec<f64>) -> Result<Self> {
        if c.is_empty() || c.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("constant drift must be a non-empty finite vector"));
        }
        let bound = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(DriftSpec {
            dimension: c.len(),
            kind: DriftKind::Constant(c),
            bound,
        })
    }

    /// Wraps an arbitrary evaluator. `bound` must dominate `|b(t, x)|`;
    /// [`DriftSpec::evaluate`] checks it on every call.
    pub fn custom<F>(label: impl Into<String>, dimension: usize, bound: f64, f: F) -> Result<Self>
    where
        F: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self::custom_with_preset(label.into(), None, dimension, bound, Arc::new(f))
    }

    fn custom_with_preset(
        label: String,
        preset: Option<DriftPreset>,
        dimension: usize,
        bound: f64,
        eval: DriftFn,
    ) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::domain("dimension must be positive"));
        }
        if !(bound >= 0.0 && bound.is_finite()) {
            return Err(Error::domain("drift bound must be finite and nonnegative"));
        }
        Ok(DriftSpec {
            kind: DriftKind::Custom(CustomDrift { label, preset, eval }),
            bound,
            dimension,
        })
    }

    /// `height` times the indicator of a fat Cantor set on `[lo, hi]`: at
    /// stage `n` the open middle piece of length `(hi - lo) / 4^n` is removed
    /// from every remaining interval.
    pub fn fat_cantor(depth: u32, lo: f64, hi: f64, height: f64) -> Result<Self> {
        if !(lo < hi) || !height.is_finite() {
            return Err(Error::domain("fat Cantor drift needs lo < hi and a finite height"));
        }
        if depth > 30 {
            return Err(Error::domain("fat Cantor depth must be at most 30"));
        }
        let preset = DriftPreset::FatCantor { depth, lo, hi, height };
        let eval: DriftFn = Arc::new(move |_t, x, out| {
            out[0] = if in_fat_cantor(x[0], depth, lo, hi) {
                height
            } else {
                0.0
            };
        });
        Self::custom_with_preset(
            format!("fat-cantor(depth={depth})"),
            Some(preset),
            1,
            height.abs(),
            eval,
        )
    }

    pub fn kind(&self) -> &DriftKind {
        &self.kind
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// True when the drift does not depend on time.
    pub fn is_time_homogeneous(&self) -> bool {
        !matches!(self.kind, DriftKind::Custom(_))
    }

    /// Evaluates `b(t, x)` with input validation and a bound spot-check.
    pub fn evaluate(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dimension {
            return Err(Error::domain(format!(
                "state has dimension {}, drift expects {}",
                x.len(),
                self.dimension
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("drift evaluated at a non-finite state"));
        }
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::domain(format!("drift evaluated at invalid time {t}")));
        }
        let mut out = vec![0.0; self.dimension];
        self.eval_into(t, x, &mut out);
        let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm <= self.bound * (1.0 + 1e-12) + 1e-300) {
            return Err(Error::domain(format!(
                "|b({t}, x)| = {norm} exceeds declared bound {}",
                self.bound
            )));
        }
        Ok(out)
    }

    /// Unchecked evaluation for inner loops.
    #[inline]
    pub fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        match &self.kind {
            DriftKind::TwoValued { alpha, beta } => {
                out[0] = if x[0] < 0.0 { *alpha } else { *beta };
            }
            DriftKind::BangBang { theta } => {
                out[0] = if x[0] < 0.0 { *theta } else { -*theta };
            }
            DriftKind::Zero => out.iter_mut().for_each(|v| *v = 0.0),
            DriftKind::Constant(c) => out.copy_from_slice(c),
            DriftKind::Custom(c) => (c.eval)(t, x, out),
        }
    }

    /// Scalar fast path for one-dimensional drifts.
    #[inline]
    pub fn eval_scalar(&self, t: f64, x: f64) -> f64 {
        debug_assert_eq!(self.dimension, 1);
        match &self.kind {
            DriftKind::TwoValued { alpha, beta } => {
                if x < 0.0 {
                    *alpha
                } else {
                    *beta
                }
            }
            DriftKind::BangBang { theta } => {
                if x < 0.0 {
                    *theta
                } else {
                    -*theta
                }
            }
            DriftKind::Zero => 0.0,
            DriftKind::Constant(c) => c[0],
            DriftKind::Custom(c) => {
                let mut out = [0.0];
                (c.eval)(t, &[x], &mut out);
                out[0]
            }
        }
    }

    /// The serializable description, when one exists.
    pub fn to_config(&self) -> Result<DriftConfig> {
        Ok(match &self.kind {
            DriftKind::TwoValued { alpha, beta } => DriftConfig::TwoValued {
                alpha: *alpha,
                beta: *beta,
            },
            DriftKind::BangBang { theta } => DriftConfig::BangBang { theta: *theta },
            DriftKind::Zero => DriftConfig::Zero {
                dimension: self.dimension,
            },
            DriftKind::Constant(c) => DriftConfig::Constant { value: c.clone() },
            DriftKind::Custom(CustomDrift {
                preset: Some(DriftPreset::FatCantor { depth, lo, hi, height }),
                ..
            }) => DriftConfig::FatCantor {
                depth: *depth,
                lo: *lo,
                hi: *hi,
                height: *height,
            },
            DriftKind::Custom(c) => {
                return Err(Error::config(format!(
                    "custom drift '{}' has no serializable form",
                    c.label
                )))
            }
        })
    }
}

fn in_fat_cantor(x: f64, depth: u32, lo: f64, hi: f64) -> bool {
    if !(x >= lo && x <= hi) {
        return false;
    }
    let (mut a, mut b) = (lo, hi);
    let mut gap = hi - lo;
    for _ in 0..depth {
        gap *= 0.25;
        let c = 0.5 * (a + b);
        let half = 0.5 * gap;
        if (x - c).abs() < half {
            return false;
        }
        if x < c {
            b = c - half;
        } else {
            a = c + half;
        }
    }
    true
}

/// Config-file form of a drift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DriftConfig {
    TwoValued {
        alpha: f64,
        beta: f64,
    },
    BangBang {
        theta: f64,
    },
    Zero {
        #[serde(default = "one")]
        dimension: usize,
    },
    Constant {
        value: Vec<f64>,
    },
    FatCantor {
        depth: u32,
        #[serde(default = "minus_one")]
        lo: f64,
        #[serde(default = "one_f")]
        hi: f64,
        #[serde(default = "one_f")]
        height: f64,
    },
}

fn one() -> usize {
    1
}
fn minus_one() -> f64 {
    -1.0
}
fn one_f() -> f64 {
    1.0
}

impl DriftConfig {
    pub fn build(&self) -> Result<DriftSpec> {
        match self {
            DriftConfig::TwoValued { alpha, beta } => DriftSpec::two_valued(*alpha, *beta),
            DriftConfig::BangBang { theta } => DriftSpec::bang_bang(*theta),
            DriftConfig::Zero { dimension } => DriftSpec::zero(*dimension),
            DriftConfig::Constant { value } => DriftSpec::constant(value.clone()),
            DriftConfig::FatCantor { depth, lo, hi, height } => DriftSpec::fat_cantor(*depth, *lo, *hi, *height),
        }
    }
}

/// Law of `X_0`.
#[derive(Debug, Clone)]
pub enum InitialState {
    Point(Vec<f64>),
    Density(DensityGrid),
}

#[derive(Debug, Clone)]
pub struct SdeProblem {
    pub drift: DriftSpec,
    pub start: InitialState,
    pub horizon: f64,
}

impl SdeProblem {
    pub fn new(drift: DriftSpec, start: InitialState, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::domain(format!("horizon must be positive, got {horizon}")));
        }
        match &start {
            InitialState::Point(x0) => {
                if x0.len() != drift.dimension() {
                    return Err(Error::domain(format!(
                        "x0 has dimension {}, drift has dimension {}",
                        x0.len(),
                        drift.dimension()
                    )));
                }
                if x0.iter().any(|v| !v.is_finite()) {
                    return Err(Error::domain("x0 must be finite"));
                }
            }
            InitialState::Density(_) => {
                if drift.dimension() != 1 {
                    return Err(Error::domain("initial densities are one-dimensional"));
                }
            }
        }
        Ok(SdeProblem { drift, start, horizon })
    }

    /// Point start convenience constructor.
    pub fn from_point(drift: DriftSpec, x0: Vec<f64>, horizon: f64) -> Result<Self> {
        Self::new(drift, InitialState::Point(x0), horizon)
    }

    pub fn point_start(&self) -> Option<&[f64]> {
        match &self.start {
            InitialState::Point(x) => Some(x),
            InitialState::Density(_) => None,
        }
    }
}

/// Turns `Y_t = y0 + sigma W_t + \int b~(s, Y_s) ds` into the unit-noise problem
/// for `X_t = sigma^{-1} Y_t`: drift `b(t, x) = sigma^{-1} b~(t, sigma x)`,
/// start `sigma^{-1} y0`. `sigma` is row-major `d x d`.
pub fn reduce_constant_noise(sigma: &[f64], drift: &DriftSpec, y0: &[f64], horizon: f64) -> Result<SdeProblem> {
    let d = drift.dimension();
    if sigma.len() != d * d || y0.len() != d {
        return Err(Error::domain(format!(
            "sigma must be {d}x{d} and y0 of length {d} to match the drift"
        )));
    }
    let m = DMatrix::from_row_slice(d, d, sigma);
    let sv = m.clone().singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition < 1e12) {
        return Err(Error::Singular { condition });
    }
    let inv = m.clone().try_inverse().ok_or(Error::Singular { condition })?;
    let x0: Vec<f64> = (&inv * nalgebra::DVector::from_column_slice(y0))
        .iter()
        .copied()
        .collect();
    let bound = drift.bound() / smin;

    let inner = drift.clone();
    let fwd = sigma.to_vec();
    // nalgebra stores column-major; the transpose's storage is row-major.
    let back = inv.transpose().as_slice().to_vec();
    let eval: DriftFn = Arc::new(move |t, x, out| {
        let mut y = vec![0.0; d];
        for i in 0..d {
            y[i] = (0..d).map(|j| fwd[i * d + j] * x[j]).sum();
        }
        let mut by = vec![0.0; d];
        inner.eval_into(t, &y, &mut by);
        for i in 0..d {
            out[i] = (0..d).map(|j| back[i * d + j] * by[j]).sum();
        }
    });
    let spec = DriftSpec::custom_with_preset(format!("noise-reduced({})", describe(drift)), None, d, bound, eval)?;
    SdeProblem::from_point(spec, x0, horizon)
}

fn describe(d: &DriftSpec) -> String {
    match d.kind() {
        DriftKind::TwoValued { alpha, beta } => format!("two-valued({alpha},{beta})"),
        DriftKind::BangBang { theta } => format!("bang-bang({theta})"),
        DriftKind::Zero => "zero".into(),
        DriftKind::Constant(c) => format!("constant({c:?})"),
        DriftKind::Custom(c) => c.label.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_valued_half_open() {
        let b = DriftSpec::two_valued(-3.0, 4.0).unwrap();
        assert_eq!(b.evaluate(0.0, &[-0.5]).unwrap(), vec![-3.0]);
        assert_eq!(b.evaluate(0.0, &[0.0]).unwrap(), vec![4.0]);
        assert_eq!(b.bound(), 4.0);
    }

    #[test]
    fn zero_and_bang_bang() {
        let z = DriftSpec::zero(1).unwrap();
        assert_eq!(z.evaluate(3.0, &[17.0]).unwrap(), vec![0.0]);
        let bb = DriftSpec::bang_bang(1.0).unwrap();
        assert_eq!(bb.evaluate(0.0, &[0.0]).unwrap(), vec![-1.0]);
        assert_eq!(bb.evaluate(0.0, &[-1e-300]).unwrap(), vec![1.0]);
    }

    #[test]
    fn bang_bang_is_symmetric_two_valued() {
        let bb = DriftSpec::bang_bang(2.5).unwrap();
        let tv = DriftSpec::two_valued(2.5, -2.5).unwrap();
        for x in [-3.0, -1e-12, -0.0, 0.0, 1e-12, 4.0] {
            assert_eq!(bb.eval_scalar(0.0, x), tv.eval_scalar(0.0, x));
        }
    }

    #[test]
    fn rejects_non_finite_state() {
        let b = DriftSpec::bang_bang(1.0).unwrap();
        assert!(matches!(b.evaluate(0.0, &[f64::NAN]), Err(Error::Domain(_))));
        assert!(b.evaluate(0.0, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn custom_bound_is_checked() {
        let b = DriftSpec::custom("lying", 1, 1.0, |_, x, out| out[0] = 2.0 * x[0]).unwrap();
        assert!(b.evaluate(0.0, &[0.25]).is_ok());
        assert!(b.evaluate(0.0, &[1.0]).is_err());
    }

    #[test]
    fn fat_cantor_membership() {
        // Depth 1 on [0, 1] removes (3/8, 5/8).
        assert!(in_fat_cantor(0.1, 1, 0.0, 1.0));
        assert!(!in_fat_cantor(0.5, 1, 0.0, 1.0));
        assert!(in_fat_cantor(0.375, 1, 0.0, 1.0));
        assert!(!in_fat_cantor(1.5, 1, 0.0, 1.0));
        // Depth 2 also removes the middle 1/16 of [0, 3/8].
        assert!(!in_fat_cantor(0.1875, 2, 0.0, 1.0));
        assert!(in_fat_cantor(0.1875, 1, 0.0, 1.0));
    }

    #[test]
    fn fat_cantor_measure() {
        // Remaining measure after n stages: 1 - sum_{k=1}^n 2^{k-1} / 4^k.
        let depth = 6;
        let m = 400_000;
        let inside = (0..m)
            .filter(|&i| in_fat_cantor((i as f64 + 0.5) / m as f64, depth, 0.0, 1.0))
            .count();
        let expected = 1.0
            - (1..=depth)
                .map(|k| 2f64.powi(k as i32 - 1) / 4f64.powi(k as i32))
                .sum::<f64>();
        assert!((inside as f64 / m as f64 - expected).abs() < 1e-3);
    }

    #[test]
    fn config_round_trip() {
        for d in [
            DriftSpec::two_valued(-3.0, 4.0).unwrap(),
            DriftSpec::bang_bang(1.0).unwrap(),
            DriftSpec::zero(2).unwrap(),
            DriftSpec::constant(vec![1.0, -2.0]).unwrap(),
            DriftSpec::fat_cantor(6, -1.0, 1.0, 1.0).unwrap(),
        ] {
            let cfg = d.to_config().unwrap();
            let back = cfg.build().unwrap().to_config().unwrap();
            assert_eq!(cfg, back);
        }
        let opaque = DriftSpec::custom("f", 1, 1.0, |_, _, o| o[0] = 0.0).unwrap();
        assert!(opaque.to_config().is_err());
    }

    #[test]
    fn noise_reduction_identity() {
        let b = DriftSpec::constant(vec![1.0, -2.0]).unwrap();
        let p = reduce_constant_noise(&[1.0, 0.0, 0.0, 1.0], &b, &[0.5, 0.25], 1.0).unwrap();
        assert_eq!(p.point_start().unwrap(), &[0.5, 0.25]);
        let v = p.drift.evaluate(0.0, &[3.0, 4.0]).unwrap();
        assert_eq!(v, vec![1.0, -2.0]);
    }

    #[test]
    fn noise_reduction_scalar() {
        let b = DriftSpec::constant(vec![4.0]).unwrap();
        let p = reduce_constant_noise(&[2.0], &b, &[2.0], 1.0).unwrap();
        assert!((p.point_start().unwrap()[0] - 1.0).abs() < 1e-15);
        assert!((p.drift.evaluate(0.3, &[7.0]).unwrap()[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn noise_reduction_diagonal_linear() {
        let b = DriftSpec::custom("id", 2, 100.0, |_, y, out| out.copy_from_slice(y)).unwrap();
        let p = reduce_constant_noise(&[1.0, 0.0, 0.0, 2.0], &b, &[0.0, 0.0], 1.0).unwrap();
        let v = p.drift.evaluate(0.0, &[1.5, -0.75]).unwrap();
        assert!((v[0] - 1.5).abs() < 1e-15 && (v[1] + 0.75).abs() < 1e-15);
    }

    #[test]
    fn noise_reduction_inverse_is_identity() {
        let b = DriftSpec::custom("nl", 2, 10.0, |t, y, out| {
            out[0] = (y[0] + t).sin() + 0.5 * y[1].cos();
            out[1] = (y[0] * y[1]).tanh();
        })
        .unwrap();
        let s = [2.0, 0.5, -0.3, 1.5];
        let fwd = reduce_constant_noise(&s, &b, &[1.0, 1.0], 1.0).unwrap();
        let m = DMatrix::from_row_slice(2, 2, &s).try_inverse().unwrap();
        let inv: Vec<f64> = m.transpose().as_slice().to_vec();
        let back = reduce_constant_noise(&inv, &fwd.drift, fwd.point_start().unwrap(), 1.0).unwrap();
        for x in [[0.1, 0.2], [-1.0, 3.0], [2.5, -0.7]] {
            let a = b.evaluate(0.4, &x).unwrap();
            let c = back.drift.evaluate(0.4, &x).unwrap();
            for i in 0..2 {
                assert!((a[i] - c[i]).abs() < 1e-12);
            }
        }
        let y0 = back.point_start().unwrap();
        assert!((y0[0] - 1.0).abs() < 1e-12 && (y0[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn singular_sigma_rejected() {
        let b = DriftSpec::zero(2).unwrap();
        let err = reduce_constant_noise(&[1.0, 2.0, 2.0, 4.0], &b, &[0.0, 0.0], 1.0).unwrap_err();
        assert!(matches!(err, Error::Singular { .. }));
    }

    #[test]
    fn problem_validation() {
        let b = DriftSpec::bang_bang(1.0).unwrap();
        assert!(SdeProblem::from_point(b.clone(), vec![0.0], 0.0).is_err());
        assert!(SdeProblem::from_point(b.clone(), vec![0.0, 1.0], 1.0).is_err());
        assert!(SdeProblem::from_point(b, vec![0.0], 1.0).is_ok());
    }
}
