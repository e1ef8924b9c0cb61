//! Closed-form reference densities.
//!
//! For `X_t = x + W_t - theta \int_0^t sgn(X_s) ds` started at `x >= 0` the
//! transition density is
//!
//! ```text
//! z > 0:  phi_t(x - z - theta t) + theta e^{-2 theta z} Q((x + z - theta t) / sqrt t)
//! z <= 0: e^{2 theta x} phi_t(x - z + theta t) + theta e^{2 theta z} Q((x - z - theta t) / sqrt t)
//! ```
//!
//! with `phi_t` the centred Gaussian density of variance `t` and `Q` the
//! standard normal upper tail. Negative starts use `p_t(x, z) = p_t(-x, -z)`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::DensityGrid;
use crate::quadrature::{integrate_with_breaks, Tolerance};
use crate::special::{ln_tail_prob, normal_cdf, normal_pdf, tail_prob};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClosedFormDensity {
    /// Law at time `t` of the bang-bang diffusion started at `x`.
    BangBang {
        theta: f64,
        t: f64,
        x: f64,
    },
    Gaussian {
        mean: f64,
        variance: f64,
    },
    /// Stationary law `theta e^{-2 theta |z|}` of the bang-bang diffusion.
    Laplace {
        theta: f64,
    },
}

impl ClosedFormDensity {
    pub fn bang_bang(theta: f64, t: f64, x: f64) -> Result<Self> {
        check_bang_bang(theta, t, x)?;
        Ok(ClosedFormDensity::BangBang { theta, t, x })
    }

    pub fn gaussian(mean: f64, variance: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) || !mean.is_finite() {
            return Err(Error::domain("Gaussian needs finite mean and positive variance"));
        }
        Ok(ClosedFormDensity::Gaussian { mean, variance })
    }

    pub fn laplace(theta: f64) -> Result<Self> {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::domain("Laplace needs theta > 0"));
        }
        Ok(ClosedFormDensity::Laplace { theta })
    }

    pub fn density(&self, z: f64) -> f64 {
        match *self {
            ClosedFormDensity::BangBang { theta, t, x } => bang_bang_unchecked(theta, t, x, z),
            ClosedFormDensity::Gaussian { mean, variance } => {
                let u = z - mean;
                (-0.5 * u * u / variance).exp() / (2.0 * PI * variance).sqrt()
            }
            ClosedFormDensity::Laplace { theta } => theta * (-2.0 * theta * z.abs()).exp(),
        }
    }

    /// Points where the density is not smooth.
    pub fn kinks(&self) -> Vec<f64> {
        match self {
            ClosedFormDensity::BangBang { .. } | ClosedFormDensity::Laplace { .. } => vec![0.0],
            ClosedFormDensity::Gaussian { .. } => Vec::new(),
        }
    }

    /// An interval carrying all but a negligible amount (< 1e-15) of mass.
    pub fn support_extent(&self) -> (f64, f64) {
        match *self {
            ClosedFormDensity::BangBang { theta, t, x } => {
                let r = theta * t + 12.0 * t.sqrt();
                (x.min(0.0) - r, x.max(0.0) + r)
            }
            ClosedFormDensity::Gaussian { mean, variance } => {
                let r = 12.0 * variance.sqrt();
                (mean - r, mean + r)
            }
            ClosedFormDensity::Laplace { theta } => (-20.0 / theta, 20.0 / theta),
        }
    }

    /// The grid extent used by [`density_to_grid`] callers by default:
    /// drift displacement plus 12 standard deviations.
    pub fn default_grid_extent(&self) -> (f64, f64) {
        match *self {
            ClosedFormDensity::BangBang { theta, t, x } => {
                let r = theta * t + 12.0 * t.sqrt();
                (x - r, x + r)
            }
            _ => self.support_extent(),
        }
    }

    /// Cumulative distribution function; quadrature for the bang-bang law.
    pub fn cdf(&self, z: f64) -> f64 {
        match *self {
            ClosedFormDensity::Gaussian { mean, variance } => normal_cdf((z - mean) / variance.sqrt()),
            ClosedFormDensity::Laplace { theta } => {
                if z < 0.0 {
                    0.5 * (2.0 * theta * z).exp()
                } else {
                    1.0 - 0.5 * (-2.0 * theta * z).exp()
                }
            }
            ClosedFormDensity::BangBang { .. } => {
                let (lo, hi) = self.support_extent();
                if z <= lo {
                    return 0.0;
                }
                if z >= hi {
                    return 1.0;
                }
                let mut breaks = vec![lo];
                if 0.0 > lo && 0.0 < z {
                    breaks.push(0.0);
                }
                breaks.push(z);
                integrate_with_breaks(|y| self.density(y), &breaks, Tolerance::abs(1e-13))
                    .map(|r| r.value.clamp(0.0, 1.0))
                    .unwrap_or(f64::NAN)
            }
        }
    }

    /// `\int p` by adaptive quadrature over [`Self::support_extent`].
    pub fn total_mass(&self, tol: f64) -> Result<f64> {
        let (lo, hi) = self.support_extent();
        let mut breaks = vec![lo];
        breaks.extend(self.kinks().into_iter().filter(|k| *k > lo && *k < hi));
        breaks.push(hi);
        Ok(integrate_with_breaks(|z| self.density(z), &breaks, Tolerance::abs(tol))?.value)
    }
}

fn check_bang_bang(theta: f64, t: f64, x: f64) -> Result<()> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::domain(format!("transition density needs t > 0, got {t}")));
    }
    if !(theta >= 0.0 && theta.is_finite()) || !x.is_finite() {
        return Err(Error::domain("theta must be nonnegative and x finite"));
    }
    Ok(())
}

/// Transition density `p_t(x, z)` of the bang-bang diffusion with drift
/// `-theta sgn(X)`. `theta = 0` gives the heat kernel.
pub fn bang_bang_density(theta: f64, t: f64, x: f64, z: f64) -> Result<f64> {
    check_bang_bang(theta, t, x)?;
    if !z.is_finite() {
        return Err(Error::domain("z must be finite"));
    }
    Ok(bang_bang_unchecked(theta, t, x, z))
}

fn bang_bang_unchecked(theta: f64, t: f64, x: f64, z: f64) -> f64 {
    let (x, z) = if x < 0.0 { (-x, -z) } else { (x, z) };
    let st = t.sqrt();
    let norm = -0.5 * (2.0 * PI * t).ln();
    // Exponents are summed before exponentiating so that e^{2 theta x}
    // never overflows on its own.
    let (gauss_exp, tail_scale, tail_arg) = if z > 0.0 {
        let u = x - z - theta * t;
        (-u * u / (2.0 * t), -2.0 * theta * z, (x + z - theta * t) / st)
    } else {
        let u = x - z + theta * t;
        (
            2.0 * theta * x - u * u / (2.0 * t),
            2.0 * theta * z,
            (x - z - theta * t) / st,
        )
    };
    let gauss = (norm + gauss_exp).exp();
    let q = tail_prob(tail_arg);
    let tail = if q > 1e-280 {
        theta * tail_scale.exp() * q
    } else {
        theta * (tail_scale + ln_tail_prob(tail_arg)).exp()
    };
    gauss + tail
}

/// `|\int p_s(x, y) p_t(y, z) dy - p_{s+t}(x, z)|` by adaptive quadrature.
pub fn verify_chapman_kolmogorov(theta: f64, s: f64, t: f64, x: f64, z: f64, tol: f64) -> Result<f64> {
    check_bang_bang(theta, s, x)?;
    check_bang_bang(theta, t, z)?;
    let reach = theta * (s + t) + 14.0 * (s.max(t)).sqrt();
    let lo = x.min(z).min(0.0) - reach;
    let hi = x.max(z).max(0.0) + reach;
    let mut breaks = vec![lo, hi, 0.0, x, z];
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let composed = integrate_with_breaks(
        |y| bang_bang_unchecked(theta, s, x, y) * bang_bang_unchecked(theta, t, y, z),
        &breaks,
        Tolerance {
            abs: tol,
            rel: 0.0,
            max_intervals: 4000,
        },
    )?;
    Ok((composed.value - bang_bang_unchecked(theta, s + t, x, z)).abs())
}

/// `\int p_t(y, z) N(y; x0, s0^2) dy`: the bang-bang density started from
/// a Gaussian instead of a point.
pub fn mollified_bang_bang_density(theta: f64, t: f64, x0: f64, s0: f64, z: f64) -> Result<f64> {
    check_bang_bang(theta, t, x0)?;
    if !(s0 > 0.0 && s0.is_finite()) || !z.is_finite() {
        return Err(Error::domain("mollifier width must be positive and z finite"));
    }
    let (lo, hi) = (x0 - 12.0 * s0, x0 + 12.0 * s0);
    let mut breaks = vec![lo, hi];
    if lo < 0.0 && hi > 0.0 {
        breaks.insert(1, 0.0);
    }
    let value = integrate_with_breaks(
        |y| bang_bang_unchecked(theta, t, y, z) * normal_pdf((y - x0) / s0) / s0,
        &breaks,
        Tolerance {
            abs: 1e-13,
            rel: 1e-11,
            max_intervals: 2000,
        },
    )?;
    Ok(value.value)
}

/// Tabulates `cf` on `n` points of `[x_min, x_max]`, refusing grids that
/// miss more than `1e-6` of the mass.
pub fn density_to_grid(cf: &ClosedFormDensity, x_min: f64, x_max: f64, n: usize, time: f64) -> Result<DensityGrid> {
    let covered = cf.cdf(x_max) - cf.cdf(x_min);
    if !(covered >= 1.0 - 1e-6) {
        let (need_lo, need_hi) = cf.default_grid_extent();
        return Err(Error::Coverage {
            lo: x_min,
            hi: x_max,
            covered,
            need_lo,
            need_hi,
        });
    }
    let grid = DensityGrid::from_fn(x_min, x_max, n, time, |z| cf.density(z))?;
    let mass = grid.mass();
    if (mass - 1.0).abs() > 1e-6 {
        return Err(Error::domain(format!(
            "{n} points resolve the density poorly (trapezoid mass {mass}); refine the grid"
        )));
    }
    Ok(grid)
}
