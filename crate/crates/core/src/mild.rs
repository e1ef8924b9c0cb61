//! Heat-kernel utilities and a grid-based Picard solver for the mild form
//! of the one-dimensional Fokker-Planck equation
//! `p(t) = G_t * m - \int_0^t \nabla G_{t-s} * (b(s) p(s)) ds`.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::conv::convolve_centered;
use crate::error::{Error, Result};
use crate::grid::{trapezoid, DensityGrid};
use crate::model::{DriftKind, InitialState, SdeProblem};
use crate::quadrature::{integrate_with_breaks, Tolerance};
use crate::special::{normal_pdf, tail_prob};

/// Derivatives of the heat kernel `G_t(x) = (2 pi t)^{-d/2} e^{-|x|^2 / 2t}`
/// whose L1 norms are tabulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatKernelOrder {
    /// `\partial_t G` in dimension `d`.
    Dt { dimension: usize },
    /// `\partial_{x_i} G`.
    Dx,
    /// `\partial^2_{x_i x_i} G`.
    DxxDiag,
    /// `\partial^2_{x_i x_j} G`, `i != j`.
    DxxOff,
    /// `\partial_{x_i} \partial^2_{x_j x_j} G`, `i != j`.
    DxxxOff,
    /// `\partial^3_{x_i x_i x_i} G`.
    DxxxDiag,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatKernelNorm {
    /// The exact value for identities, the upper bound otherwise.
    pub closed_form: f64,
    pub quadrature: f64,
    pub is_identity: bool,
}

fn quad_tol() -> Tolerance {
    Tolerance {
        abs: 1e-14,
        rel: 1e-12,
        max_intervals: 4000,
    }
}

fn line_integral<F: Fn(f64) -> f64>(f: F, t: f64, roots: &[f64]) -> Result<f64> {
    let l = 40.0 * t.sqrt();
    let mut breaks = vec![-l];
    breaks.extend(roots.iter().map(|r| r * t.sqrt()));
    breaks.push(l);
    Ok(integrate_with_breaks(f, &breaks, quad_tol())?.value)
}

fn plane_integral<F: Fn(f64, f64) -> f64>(f: F, t: f64, roots_x: &[f64], roots_y: &[f64]) -> Result<f64> {
    let inner = |x: f64| line_integral(|y| f(x, y), t, roots_y).unwrap_or(f64::NAN);
    let value = line_integral(inner, t, roots_x)?;
    if !value.is_finite() {
        return Err(Error::Quadrature {
            estimate: value,
            tolerance: quad_tol().abs,
        });
    }
    Ok(value)
}

/// L1 norm of a heat-kernel derivative: the closed form (identity or bound)
/// next to an independent quadrature of the same norm.
pub fn heat_kernel_l1_norms(t: f64, order: HeatKernelOrder) -> Result<HeatKernelNorm> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::domain(format!("time must be positive, got {t}")));
    }
    let g = |x: f64| normal_pdf(x / t.sqrt()) / t.sqrt();
    let c = (2.0 / PI).sqrt();
    let (closed_form, quadrature, is_identity) = match order {
        HeatKernelOrder::Dx => (
            (2.0 / (PI * t)).sqrt(),
            line_integral(|x| (x / t).abs() * g(x), t, &[0.0])?,
            true,
        ),
        HeatKernelOrder::DxxDiag => (
            2.0 / t,
            line_integral(|x| (x * x / (t * t) - 1.0 / t).abs() * g(x), t, &[-1.0, 1.0])?,
            false,
        ),
        HeatKernelOrder::DxxxDiag => {
            let r3 = 3f64.sqrt();
            (
                5.0 * c / t.powf(1.5),
                line_integral(
                    |x| (-x * x * x / (t * t * t) + 3.0 * x / (t * t)).abs() * g(x),
                    t,
                    &[-r3, 0.0, r3],
                )?,
                false,
            )
        }
        HeatKernelOrder::DxxOff => (
            2.0 / (PI * t),
            plane_integral(|x, y| (x * y / (t * t)).abs() * g(x) * g(y), t, &[0.0], &[0.0])?,
            true,
        ),
        HeatKernelOrder::DxxxOff => (
            2.0 * c / t.powf(1.5),
            plane_integral(
                |x, y| (x / t * (y * y / (t * t) - 1.0 / t)).abs() * g(x) * g(y),
                t,
                &[0.0],
                &[-1.0, 1.0],
            )?,
            false,
        ),
        HeatKernelOrder::Dt { dimension } => {
            if dimension == 0 {
                return Err(Error::domain("dimension must be positive"));
            }
            let d = dimension as f64;
            // |S^{d-1}| \int_0^\infty |r^2 / 2t^2 - d / 2t| G_t(r) r^{d-1} dr
            let sphere = 2.0 * PI.powf(d / 2.0) / libm::tgamma(d / 2.0);
            let norm = (2.0 * PI * t).powf(-d / 2.0);
            let f = |r: f64| {
                (r * r / (2.0 * t * t) - d / (2.0 * t)).abs()
                    * norm
                    * (-r * r / (2.0 * t)).exp()
                    * r.powi(dimension as i32 - 1)
            };
            let l = 40.0 * t.sqrt() + (d * t).sqrt();
            let value = integrate_with_breaks(f, &[0.0, (d * t).sqrt(), l], quad_tol())?.value;
            (d / t, sphere * value, false)
        }
    };
    Ok(HeatKernelNorm {
        closed_form,
        quadrature,
        is_identity,
    })
}

fn gaussian_half_width(t: f64, dx: f64) -> usize {
    ((12.0 * t.sqrt() / dx).ceil() as usize).max(1)
}

/// `G_t * m` on the grid of `m`, using the tabulated kernel normalized to
/// unit discrete mass. Mass leaving the grid is lost.
pub fn gaussian_convolve(grid: &DensityGrid, t: f64) -> Result<DensityGrid> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::domain(format!("time must be positive, got {t}")));
    }
    let n = grid.len();
    let dx = grid.spacing();
    let half = gaussian_half_width(t, dx);
    if half >= n {
        return Err(Error::domain(format!(
            "heat kernel at t={t} spans {half} grid steps, beyond the padded domain of {n}"
        )));
    }
    let kernel = gaussian_kernel(t, dx, half);
    let values: Vec<f64> = convolve_centered(grid.values(), &kernel)
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();
    DensityGrid::new(grid.x_min(), grid.x_max(), values, grid.time() + t)
}

fn gaussian_kernel(t: f64, dx: f64, half: usize) -> Vec<f64> {
    let s = t.sqrt();
    let mut k: Vec<f64> = (0..=2 * half)
        .map(|j| normal_pdf((j as f64 - half as f64) * dx / s))
        .collect();
    let total: f64 = k.iter().sum();
    for v in &mut k {
        *v /= total;
    }
    k
}

/// How `\int \nabla G_{t-s} ds` over one subinterval is weighted; the
/// drift-times-density factor is always frozen at the left endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelRule {
    /// `dt G'_{t-s}` at the left-endpoint age; the singular last
    /// subinterval uses the midpoint age `dt / 2`.
    LeftEndpoint,
    /// `\int G'_a da` over the subinterval's ages, in closed form.
    #[default]
    Integrated,
}

impl KernelRule {
    // Weight at offset u > 0 for the subinterval ending `lag` steps back.
    fn weight(self, u: f64, lag: usize, dt: f64) -> f64 {
        match self {
            KernelRule::LeftEndpoint => {
                let age = if lag == 1 { 0.5 * dt } else { lag as f64 * dt };
                let s = age.sqrt();
                -u / age * normal_pdf(u / s) / s * dt
            }
            KernelRule::Integrated => {
                // \int_{a1}^{a2} G'_a(u) da = -2 (Q(u / sqrt a2) - Q(u / sqrt a1))
                let a2 = lag as f64 * dt;
                let a1 = a2 - dt;
                let far = if a1 > 0.0 { tail_prob(u / a1.sqrt()) } else { 0.0 };
                -2.0 * (tail_prob(u / a2.sqrt()) - far)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PicardConfig {
    pub n_time_steps: usize,
    pub max_iterations: usize,
    /// Stopping threshold on the sup-over-time L1 change between iterates.
    pub tolerance: f64,
    /// Grid size, a power of two.
    pub n_points: usize,
    pub kernel_rule: KernelRule,
    /// Truncation domain; defaults to the start plus `B T + 12 sqrt(T)` on
    /// either side.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub domain: Option<(f64, f64)>,
}

impl Default for PicardConfig {
    fn default() -> Self {
        PicardConfig {
            n_time_steps: 256,
            max_iterations: 60,
            tolerance: 1e-9,
            n_points: 1 << 13,
            kernel_rule: KernelRule::default(),
            domain: None,
        }
    }
}

impl PicardConfig {
    fn validate(&self) -> Result<()> {
        if self.n_time_steps == 0 || self.max_iterations == 0 {
            return Err(Error::config("n_time_steps and max_iterations must be positive"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::config("tolerance must be positive"));
        }
        if self.n_points < 16 || !self.n_points.is_power_of_two() {
            return Err(Error::config(format!(
                "n_points must be a power of two >= 16, got {}",
                self.n_points
            )));
        }
        if let Some((a, b)) = self.domain {
            if !(a < b && a.is_finite() && b.is_finite()) {
                return Err(Error::config(format!("invalid domain [{a}, {b}]")));
            }
        }
        Ok(())
    }
}

/// The truncation domain the solver uses for `problem`.
pub fn solver_domain(problem: &SdeProblem, cfg: &PicardConfig) -> Result<(f64, f64)> {
    if let Some(d) = cfg.domain {
        return Ok(d);
    }
    let t = problem.horizon;
    let reach = problem.drift.bound() * t;
    match &problem.start {
        InitialState::Point(x0) => {
            let r = reach + 12.0 * t.sqrt();
            Ok((x0[0] - r, x0[0] + r))
        }
        InitialState::Density(m) => {
            let dx = m.spacing();
            let w: Vec<f64> = m.values().to_vec();
            let mass = trapezoid(&w, dx);
            let first: Vec<f64> = m.abscissae().zip(&w).map(|(x, p)| x * p).collect();
            let mean = trapezoid(&first, dx) / mass;
            let second: Vec<f64> = m.abscissae().zip(&w).map(|(x, p)| (x - mean).powi(2) * p).collect();
            let var = trapezoid(&second, dx) / mass;
            let r = reach + 12.0 * (t + var).sqrt();
            Ok((mean - r, mean + r))
        }
    }
}

/// Width of the Gaussian that replaces a point start: four grid steps.
pub fn mollifier_width(domain: (f64, f64), n_points: usize) -> f64 {
    4.0 * (domain.1 - domain.0) / (n_points - 1) as f64
}

/// Terminal density and per-iteration residuals of a Picard run.
#[derive(Debug, Clone)]
pub struct PicardOutcome {
    pub density: DensityGrid,
    pub residuals: Vec<f64>,
    pub converged: bool,
}

struct Spectral {
    n: usize,
    size: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Spectral {
    fn new(n: usize) -> Self {
        let size = 2 * n;
        let mut planner = FftPlanner::<f64>::new();
        Spectral {
            n,
            size,
            fwd: planner.plan_fft_forward(size),
            inv: planner.plan_fft_inverse(size),
        }
    }

    fn half_len(&self) -> usize {
        self.size / 2 + 1
    }

    // Non-negative frequencies of the zero-padded signal.
    fn forward(&self, signal: &[f64]) -> Vec<Complex<f64>> {
        let mut buf = vec![Complex::new(0.0, 0.0); self.size];
        for (b, &v) in buf.iter_mut().zip(signal) {
            b.re = v;
        }
        self.fwd.process(&mut buf);
        buf.truncate(self.half_len());
        buf
    }

    // A kernel given at offsets `-half..=half`, wrapped cyclically so that
    // products with `forward` spectra give centered linear convolutions.
    fn kernel(&self, values: &[f64]) -> Vec<Complex<f64>> {
        let half = values.len() / 2;
        let mut buf = vec![Complex::new(0.0, 0.0); self.size];
        for (j, &v) in values.iter().enumerate() {
            let idx = (j + self.size - half) % self.size;
            buf[idx].re = v;
        }
        self.fwd.process(&mut buf);
        buf.truncate(self.half_len());
        buf
    }

    fn inverse(&self, half_spectrum: &[Complex<f64>]) -> Vec<f64> {
        let mut buf = vec![Complex::new(0.0, 0.0); self.size];
        buf[..half_spectrum.len()].copy_from_slice(half_spectrum);
        for k in 1..self.size / 2 {
            buf[self.size - k] = half_spectrum[k].conj();
        }
        self.inv.process(&mut buf);
        let scale = 1.0 / self.size as f64;
        buf[..self.n].iter().map(|c| c.re * scale).collect()
    }
}

fn initial_on_grid(problem: &SdeProblem, a: f64, b: f64, n: usize) -> Result<Vec<f64>> {
    let dx = (b - a) / (n - 1) as f64;
    let values: Vec<f64> = match &problem.start {
        InitialState::Point(x0) => {
            let s0 = mollifier_width((a, b), n);
            (0..n)
                .map(|i| normal_pdf((a + i as f64 * dx - x0[0]) / s0) / s0)
                .collect()
        }
        InitialState::Density(m) => (0..n).map(|i| m.interpolate(a + i as f64 * dx)).collect(),
    };
    let mass = trapezoid(&values, dx);
    if (mass - 1.0).abs() > 1e-3 {
        return Err(Error::MassDrift { mass, allowed: 1e-3 });
    }
    Ok(values.into_iter().map(|v| v / mass).collect())
}

fn run_picard(problem: &SdeProblem, cfg: &PicardConfig, fail_on_stall: bool) -> Result<PicardOutcome> {
    cfg.validate()?;
    if problem.drift.dimension() != 1 {
        return Err(Error::domain("the mild solver is one-dimensional"));
    }
    let (a, b) = solver_domain(problem, cfg)?;
    let n = cfg.n_points;
    let dx = (b - a) / (n - 1) as f64;
    let steps = cfg.n_time_steps;
    let horizon = problem.horizon;
    let dt = horizon / steps as f64;
    if gaussian_half_width(horizon, dx) >= n {
        return Err(Error::domain("domain too narrow for the heat kernel at the horizon"));
    }
    let xs: Vec<f64> = (0..n).map(|i| a + i as f64 * dx).collect();
    let spectral = Spectral::new(n);
    let m0 = initial_on_grid(problem, a, b, n)?;

    let m0_hat = spectral.forward(&m0);
    let mut heat = Vec::with_capacity(steps + 1);
    heat.push(m0.clone());
    for k in 1..=steps {
        let t = k as f64 * dt;
        let g_hat = spectral.kernel(&gaussian_kernel(t, dx, gaussian_half_width(t, dx)));
        let prod: Vec<Complex<f64>> = m0_hat.iter().zip(&g_hat).map(|(x, y)| x * y).collect();
        heat.push(spectral.inverse(&prod));
    }

    let zero_drift = matches!(problem.drift.kind(), DriftKind::Zero);
    // Spectra of the flux kernel for lags 1..=steps, scaled by dx.
    let grad_hat: Vec<Vec<Complex<f64>>> = if zero_drift {
        Vec::new()
    } else {
        (1..=steps)
            .map(|lag| {
                let half = gaussian_half_width(lag as f64 * dt, dx);
                let mut k = vec![0.0; 2 * half + 1];
                for j in 1..=half {
                    let v = cfg.kernel_rule.weight(j as f64 * dx, lag, dt) * dx;
                    k[half + j] = v;
                    k[half - j] = -v;
                }
                spectral.kernel(&k)
            })
            .collect()
    };

    // The history sum \sum_{j<k} D_{k-j} F_j is a causal convolution in the
    // time index, done per frequency bin with FFTs of length `lag_len`.
    let bins = spectral.half_len();
    let lag_len = (2 * steps).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let lag_fwd = planner.plan_fft_forward(lag_len);
    let lag_inv = planner.plan_fft_inverse(lag_len);
    let lag_hat: Vec<Vec<Complex<f64>>> = (0..bins)
        .map(|w| {
            let mut seq = vec![Complex::new(0.0, 0.0); lag_len];
            for (lag, g) in grad_hat.iter().enumerate() {
                seq[lag + 1] = g[w];
            }
            lag_fwd.process(&mut seq);
            seq
        })
        .collect();
    drop(grad_hat);

    let mut q = heat.clone();
    let mut residuals = Vec::new();
    let mut converged = false;
    for _ in 0..cfg.max_iterations {
        let mut next = Vec::with_capacity(steps + 1);
        next.push(m0.clone());
        if zero_drift {
            next.extend(heat[1..].iter().cloned());
        } else {
            let source_hat: Vec<Vec<Complex<f64>>> = (0..steps)
                .map(|j| {
                    let t = j as f64 * dt;
                    let f: Vec<f64> = xs
                        .iter()
                        .zip(&q[j])
                        .map(|(&x, &p)| problem.drift.eval_scalar(t, x) * p)
                        .collect();
                    spectral.forward(&f)
                })
                .collect();
            let mut flux_hat = vec![vec![Complex::new(0.0, 0.0); bins]; steps];
            let mut seq = vec![Complex::new(0.0, 0.0); lag_len];
            let scale = 1.0 / lag_len as f64;
            for w in 0..bins {
                seq.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
                for (j, src) in source_hat.iter().enumerate() {
                    seq[j] = src[w];
                }
                lag_fwd.process(&mut seq);
                for (c, d) in seq.iter_mut().zip(&lag_hat[w]) {
                    *c *= d;
                }
                lag_inv.process(&mut seq);
                for (k, out) in flux_hat.iter_mut().enumerate() {
                    out[w] = seq[k + 1] * scale;
                }
            }
            for (k, f_hat) in flux_hat.iter().enumerate() {
                let flux = spectral.inverse(f_hat);
                next.push(heat[k + 1].iter().zip(&flux).map(|(h, f)| h - f).collect());
            }
        }
        let mut residual: f64 = 0.0;
        for (new, old) in next.iter().zip(&q) {
            let diff: Vec<f64> = new.iter().zip(old).map(|(x, y)| (x - y).abs()).collect();
            residual = residual.max(trapezoid(&diff, dx));
            let mass = trapezoid(new, dx);
            if (mass - 1.0).abs() > 1e-3 {
                return Err(Error::MassDrift { mass, allowed: 1e-3 });
            }
        }
        residuals.push(residual);
        q = next;
        if residual < cfg.tolerance {
            converged = true;
            break;
        }
    }
    if !converged && fail_on_stall {
        return Err(Error::NoConvergence {
            iterations: cfg.max_iterations,
            residual: residuals.last().copied().unwrap_or(f64::NAN),
        });
    }
    let terminal: Vec<f64> = q[steps].iter().map(|v| v.max(0.0)).collect();
    Ok(PicardOutcome {
        density: DensityGrid::new(a, b, terminal, horizon)?,
        residuals,
        converged,
    })
}

/// Picard fixed point of the mild equation, returned at the horizon.
/// The time integral freezes `b p` at the left endpoint of each of the
/// `n_time_steps` subintervals and differentiates the kernel rather than
/// the drift.
pub fn picard_solve(problem: &SdeProblem, cfg: &PicardConfig) -> Result<DensityGrid> {
    Ok(run_picard(problem, cfg, true)?.density)
}

/// Like [`picard_solve`] but also reports the residual of every iteration.
pub fn picard_solve_detailed(problem: &SdeProblem, cfg: &PicardConfig) -> Result<PicardOutcome> {
    run_picard(problem, cfg, true)
}

/// Sup-over-time L1 change between successive Picard iterates, until the
/// tolerance is met or the iteration budget runs out.
pub fn contraction_diagnostics(problem: &SdeProblem, cfg: &PicardConfig) -> Result<Vec<f64>> {
    Ok(run_picard(problem, cfg, false)?.residuals)
}

#[cfg(test)]
#[allow(clippy::approx_constant)]
mod tests {
    use super::*;
    use crate::exact::mollified_bang_bang_density;
    use crate::model::DriftSpec;

    fn gaussian_start(var: f64) -> InitialState {
        let s = var.sqrt();
        InitialState::Density(DensityGrid::from_fn(-2.0, 2.0, 1 << 12, 0.0, |x| normal_pdf(x / s) / s).unwrap())
    }

    fn l1_vs<F: Fn(f64) -> f64>(grid: &DensityGrid, f: F) -> f64 {
        let diff: Vec<f64> = grid
            .abscissae()
            .zip(grid.values())
            .map(|(x, p)| (p - f(x)).abs())
            .collect();
        trapezoid(&diff, grid.spacing())
    }

    #[test]
    fn heat_kernel_identities() {
        for t in [0.1, 1.0, 10.0] {
            for order in [HeatKernelOrder::Dx, HeatKernelOrder::DxxOff] {
                let r = heat_kernel_l1_norms(t, order).unwrap();
                assert!(r.is_identity);
                assert!(
                    (r.quadrature - r.closed_form).abs() < 1e-6 * r.closed_form.max(1.0),
                    "{order:?} {t}: {r:?}"
                );
            }
        }
        let dx = heat_kernel_l1_norms(1.0, HeatKernelOrder::Dx).unwrap();
        assert!((dx.closed_form - 0.797_884_560_802_865_4).abs() < 1e-15);
        let off = heat_kernel_l1_norms(1.0, HeatKernelOrder::DxxOff).unwrap();
        assert!((off.closed_form - 0.636_619_772_367_581_4).abs() < 1e-15);
    }

    #[test]
    fn heat_kernel_bounds() {
        // E|Z^2 - 1| = 4 phi(1) for a standard normal Z.
        let e_abs = 4.0 * normal_pdf(1.0);
        for t in [0.1, 1.0, 10.0] {
            for order in [
                HeatKernelOrder::Dt { dimension: 1 },
                HeatKernelOrder::Dt { dimension: 3 },
                HeatKernelOrder::DxxDiag,
                HeatKernelOrder::DxxxOff,
                HeatKernelOrder::DxxxDiag,
            ] {
                let r = heat_kernel_l1_norms(t, order).unwrap();
                assert!(!r.is_identity);
                assert!(r.quadrature <= r.closed_form, "{order:?} {t}: {r:?}");
            }
            let diag = heat_kernel_l1_norms(t, HeatKernelOrder::DxxDiag).unwrap();
            assert!((diag.quadrature - e_abs / t).abs() < 1e-9);
            let dt1 = heat_kernel_l1_norms(t, HeatKernelOrder::Dt { dimension: 1 }).unwrap();
            assert!((dt1.quadrature - e_abs / (2.0 * t)).abs() < 1e-9);
        }
        let r = heat_kernel_l1_norms(2.0, HeatKernelOrder::DxxDiag).unwrap();
        assert!(r.quadrature <= 1.0);
        assert!(heat_kernel_l1_norms(0.0, HeatKernelOrder::Dx).is_err());
    }

    #[test]
    fn convolving_a_spike_gives_the_heat_kernel() {
        let n = 1 << 12;
        let (a, b) = (-10.0, 10.0);
        let dx = (b - a) / (n - 1) as f64;
        let i0 = ((0.0 - a) / dx).round() as usize;
        let mut v = vec![0.0; n];
        v[i0] = 1.0 / dx;
        let spike = DensityGrid::new(a, b, v, 0.0).unwrap();
        let out = gaussian_convolve(&spike, 1.0).unwrap();
        let shift = a + i0 as f64 * dx;
        let err = out
            .abscissae()
            .zip(out.values())
            .map(|(x, p)| (p - normal_pdf(x - shift)).abs())
            .fold(0.0, f64::max);
        assert!(err <= 2.0 * dx, "{err}");
    }

    #[test]
    fn heat_semigroup_and_continuity() {
        let g = DensityGrid::from_fn(-16.0, 16.0, 1 << 13, 0.0, normal_pdf).unwrap();
        let out = gaussian_convolve(&g, 1.0).unwrap();
        let s = 2f64.sqrt();
        assert!(l1_vs(&out, |x| normal_pdf(x / s) / s) <= 1e-6);
        assert!((out.mass() - 1.0).abs() < 1e-8);
        let d2 = g.l1_distance(&gaussian_convolve(&g, 1e-2).unwrap()).unwrap();
        let d3 = g.l1_distance(&gaussian_convolve(&g, 1e-3).unwrap()).unwrap();
        assert!(d3 < d2);
        let narrow = DensityGrid::from_fn(-1.0, 1.0, 64, 0.0, |x| 0.5 * (x.abs() <= 1.0) as u8 as f64).unwrap();
        assert!(gaussian_convolve(&narrow, 4.0).is_err());
    }

    #[test]
    fn zero_drift_is_the_heat_flow() {
        let problem = SdeProblem::new(DriftSpec::zero(1).unwrap(), gaussian_start(0.01), 1.0).unwrap();
        let cfg = PicardConfig::default();
        let residuals = contraction_diagnostics(&problem, &cfg).unwrap();
        assert_eq!(residuals, vec![0.0]);
        let p = picard_solve(&problem, &cfg).unwrap();
        let s = 1.01f64.sqrt();
        assert!(l1_vs(&p, |x| normal_pdf(x / s) / s) <= 1e-4);
    }

    #[test]
    fn constant_drift_shifts() {
        let problem = SdeProblem::new(DriftSpec::constant(vec![1.0]).unwrap(), gaussian_start(0.01), 1.0).unwrap();
        let cfg = PicardConfig::default();
        let p = picard_solve(&problem, &cfg).unwrap();
        let s = 1.01f64.sqrt();
        let err = l1_vs(&p, |x| normal_pdf((x - 1.0) / s) / s);
        assert!(err <= 5e-3, "{err}");
        assert!((p.mass() - 1.0).abs() < 1e-4);
    }

    fn bang_bang_error(cfg: &PicardConfig) -> f64 {
        let problem = SdeProblem::new(DriftSpec::bang_bang(1.0).unwrap(), gaussian_start(0.01), 1.0).unwrap();
        let p = picard_solve(&problem, cfg).unwrap();
        l1_vs(&p, |z| mollified_bang_bang_density(1.0, 1.0, 0.0, 0.1, z).unwrap())
    }

    #[test]
    fn bang_bang_matches_exact_and_refines() {
        let coarse = PicardConfig {
            n_points: 1 << 12,
            n_time_steps: 128,
            ..Default::default()
        };
        let fine = PicardConfig {
            n_points: 1 << 13,
            n_time_steps: 256,
            ..Default::default()
        };
        let (e1, e2) = (bang_bang_error(&coarse), bang_bang_error(&fine));
        assert!(e2 <= 2e-2, "{e2}");
        assert!(e1 / e2 >= 1.9, "{e1} -> {e2}");
        let spec_rule = PicardConfig {
            kernel_rule: KernelRule::LeftEndpoint,
            ..fine
        };
        let e3 = bang_bang_error(&spec_rule);
        assert!(e3 <= 2e-2, "{e3}");
    }

    #[test]
    fn contraction_is_faster_on_short_horizons() {
        let cfg = PicardConfig {
            n_points: 1 << 11,
            n_time_steps: 64,
            ..Default::default()
        };
        let run = |t: f64| {
            let problem = SdeProblem::from_point(DriftSpec::bang_bang(1.0).unwrap(), vec![0.0], t).unwrap();
            contraction_diagnostics(&problem, &cfg).unwrap()
        };
        let long = run(1.0);
        let short = run(0.1);
        assert!(short.len() < long.len());
        assert!(long.iter().all(|r| *r > 0.0));
        let n = long.len();
        assert!(long[n - 1] < long[n - 2] && long[n - 2] < long[n - 3]);
    }

    #[test]
    fn rejects_bad_configs() {
        let problem = SdeProblem::from_point(DriftSpec::bang_bang(1.0).unwrap(), vec![0.0], 1.0).unwrap();
        let cfg = PicardConfig {
            n_points: 1000,
            ..Default::default()
        };
        assert!(picard_solve(&problem, &cfg).is_err());
        let cfg = PicardConfig {
            max_iterations: 1,
            n_points: 1 << 10,
            n_time_steps: 16,
            ..Default::default()
        };
        assert!(matches!(picard_solve(&problem, &cfg), Err(Error::NoConvergence { .. })));
    }
}
