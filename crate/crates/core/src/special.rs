//! Gaussian density and tail functions.

use std::f64::consts::{PI, SQRT_2};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal upper tail `P(Z > x)`.
#[inline]
pub fn tail_prob(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

/// Standard normal CDF `P(Z <= x)`.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    tail_prob(-x)
}

/// Natural log of [`tail_prob`], finite far beyond the point where the tail
/// underflows.
pub fn ln_tail_prob(x: f64) -> f64 {
    if x < 30.0 {
        return tail_prob(x).ln();
    }
    // Laplace continued fraction Q(x) = phi(x) / (x + 1/(x + 2/(x + ...))),
    // evaluated bottom-up; 40 levels is far past convergence for x >= 30.
    let mut denom = x;
    for k in (1..=40).rev() {
        denom = x + k as f64 / denom;
    }
    -0.5 * x * x - 0.5 * (2.0 * PI).ln() - denom.ln()
}

#[cfg(test)]
#[allow(clippy::approx_constant)]
mod tests {
    use super::*;

    // Reference values from 40-digit arithmetic.
    const TAIL: &[(f64, f64, f64)] = &[
        (-3.0, 0.998_650_101_968_369_9, -0.001_350_809_964_748_193_8),
        (0.0, 0.5, -0.693_147_180_559_945_3),
        (0.5, 0.308_537_538_725_986_9, -1.175_911_761_593_618_6),
        (1.0, 0.158_655_253_931_457_05, -1.841_021_645_009_263_5),
        (5.0, 2.866_515_718_791_939e-7, -15.064_998_393_988_726),
        (10.0, 7.619_853_024_160_526e-24, -53.231_285_150_512_47),
        (20.0, 2.753_624_118_606_233_7e-89, -203.917_155_371_097_26),
    ];

    #[test]
    fn tail_matches_reference() {
        for &(x, q, lnq) in TAIL {
            let rel = (tail_prob(x) - q).abs() / q;
            assert!(rel < 1e-13, "x={x}: rel err {rel:e}");
            assert!((ln_tail_prob(x) - lnq).abs() < 1e-12 * lnq.abs().max(1.0));
        }
    }

    #[test]
    fn log_tail_past_underflow() {
        assert!((ln_tail_prob(30.0) - -454.321_243_956_343_2).abs() < 1e-10);
        assert!((ln_tail_prob(40.0) - -804.608_442_013_753_8).abs() < 1e-10);
        // Both branches agree near the switch.
        let below = tail_prob(29.999).ln();
        let above = {
            let x: f64 = 29.999;
            let mut d = x;
            for k in (1..=40).rev() {
                d = x + k as f64 / d;
            }
            -0.5 * x * x - 0.5 * (2.0 * PI).ln() - d.ln()
        };
        assert!((below - above).abs() < 1e-11);
    }

    #[test]
    fn cdf_and_pdf() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((normal_cdf(1.0) + tail_prob(1.0) - 1.0).abs() < 1e-15);
        assert!((normal_pdf(0.0) - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-16);
    }
}
