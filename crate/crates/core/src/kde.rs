//! Kernel density estimation of terminal-value samples.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conv::convolve_centered;
use crate::error::{Error, Result};
use crate::exact::ClosedFormDensity;
use crate::grid::trapezoid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    Epanechnikov,
    Gaussian,
}

/// A second-order kernel with its roughness `R(K) = \int K^2` and second
/// moment `m2(K) = \int x^2 K`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub r_k: f64,
    pub m2_k: f64,
}

impl KernelSpec {
    pub fn new(kind: KernelKind) -> Self {
        match kind {
            KernelKind::Epanechnikov => KernelSpec {
                kind,
                r_k: 3.0 / 5.0,
                m2_k: 1.0 / 5.0,
            },
            KernelKind::Gaussian => KernelSpec {
                kind,
                r_k: 1.0 / (2.0 * PI.sqrt()),
                m2_k: 1.0,
            },
        }
    }

    pub fn epanechnikov() -> Self {
        Self::new(KernelKind::Epanechnikov)
    }

    pub fn gaussian() -> Self {
        Self::new(KernelKind::Gaussian)
    }

    #[inline]
    pub fn value(&self, u: f64) -> f64 {
        match self.kind {
            KernelKind::Epanechnikov => {
                if u.abs() <= 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
            KernelKind::Gaussian => (-0.5 * u * u).exp() / (2.0 * PI).sqrt(),
        }
    }

    /// Half-width (in bandwidth units) beyond which the kernel is zero or
    /// below `1e-18`.
    pub fn reach(&self) -> f64 {
        match self.kind {
            KernelKind::Epanechnikov => 1.0,
            KernelKind::Gaussian => 9.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BandwidthRule {
    /// `c N^{-1/5}` with `c` built from the reference density's curvature.
    MiseOptimal(ClosedFormDensity),
    Silverman,
    /// Silverman's rule on each side of `split_point`.
    SilvermanPerMode {
        split_point: f64,
    },
    Fixed(f64),
}

/// Roughness `R(p'') = \int p''(z)^2 dz` of a reference density, with the
/// point masses of `p''` at kinks left out. Analytic for the Gaussian and
/// Laplace laws; otherwise fourth-order central differences on each smooth
/// piece.
pub fn curvature_integral(reference: &ClosedFormDensity) -> Result<f64> {
    let value = match *reference {
        ClosedFormDensity::Gaussian { variance, .. } => 3.0 / (8.0 * PI.sqrt() * variance.powf(2.5)),
        ClosedFormDensity::Laplace { theta } => 8.0 * theta.powi(5),
        ClosedFormDensity::BangBang { .. } => {
            let (lo, hi) = reference.support_extent();
            let mut breaks = vec![lo];
            breaks.extend(reference.kinks().into_iter().filter(|k| *k > lo && *k < hi));
            breaks.push(hi);
            let dz_target = (hi - lo) / (1u32 << 18) as f64;
            breaks
                .windows(2)
                .map(|w| smooth_piece_curvature(reference, w[0], w[1], dz_target))
                .sum()
        }
    };
    if !(value.is_finite() && value > 0.0) {
        return Err(Error::domain(format!("curvature integral is {value}")));
    }
    Ok(value)
}

// Stencils never straddle the piece ends; the two slivers of width 2 dz
// next to them take the nearest interior value.
fn smooth_piece_curvature(reference: &ClosedFormDensity, a: f64, b: f64, dz_target: f64) -> f64 {
    let m = ((b - a) / dz_target).ceil().max(8.0) as usize;
    let dz = (b - a) / m as f64;
    // Evaluate just inside the piece so endpoint values come from its branch.
    let f: Vec<f64> = (0..=m)
        .map(|i| {
            let z = if i == 0 {
                a + 1e-12 * dz
            } else if i == m {
                b - 1e-12 * dz
            } else {
                a + i as f64 * dz
            };
            reference.density(z)
        })
        .collect();
    let sq: Vec<f64> = (2..=m - 2)
        .map(|i| {
            let d2 = (-f[i + 2] + 16.0 * f[i + 1] - 30.0 * f[i] + 16.0 * f[i - 1] - f[i - 2]) / (12.0 * dz * dz);
            d2 * d2
        })
        .collect();
    trapezoid(&sq, dz) + 2.0 * dz * (sq[0] + sq[sq.len() - 1])
}

/// MISE-optimal bandwidth `c N^{-1/5}`,
/// `c = R(K)^{1/5} / (m2(K)^{2/5} R(p'')^{1/5})`.
pub fn mise_bandwidth(kernel: &KernelSpec, reference: &ClosedFormDensity, n: usize) -> Result<f64> {
    if n < 1 {
        return Err(Error::domain("sample size must be positive"));
    }
    let curvature = curvature_integral(reference)?;
    let c = kernel.r_k.powf(0.2) / (kernel.m2_k.powf(0.4) * curvature.powf(0.2));
    Ok(c * (n as f64).powf(-0.2))
}

/// Type-7 (linear interpolation) quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let pos = p * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let w = pos - lo as f64;
    sorted[lo] + w * (sorted[hi] - sorted[lo])
}

fn silverman_sorted(sorted: &[f64]) -> Result<f64> {
    let n = sorted.len();
    if n < 4 {
        return Err(Error::domain(format!(
            "Silverman's rule needs at least 4 points, got {n}"
        )));
    }
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let var = sorted.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    let iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
    silverman_formula(sd, iqr, n)
}

/// `0.9 min(sd, IQR / 1.34) N^{-1/5}` from precomputed statistics.
pub fn silverman_formula(sd: f64, iqr: f64, n: usize) -> Result<f64> {
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    if !(spread > 0.0 && spread.is_finite()) || n == 0 {
        return Err(Error::domain("sample has zero spread"));
    }
    Ok(0.9 * spread * (n as f64).powf(-0.2))
}

fn sorted_copy(sample: &[f64]) -> Result<Vec<f64>> {
    if sample.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("sample contains non-finite values"));
    }
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

/// `0.9 min(sd, IQR / 1.34) N^{-1/5}` with the unbiased standard deviation
/// and type-7 quartiles. Falls back to `sd` when the IQR vanishes.
pub fn silverman_bandwidth(sample: &[f64]) -> Result<f64> {
    silverman_sorted(&sorted_copy(sample)?)
}

/// Silverman bandwidths for `{x < split}` and `{x >= split}`.
pub fn silverman_per_mode(sample: &[f64], split_point: f64) -> Result<(f64, f64)> {
    let sorted = sorted_copy(sample)?;
    let k = sorted.partition_point(|&x| x < split_point);
    let (left, right) = sorted.split_at(k);
    if left.len() < 4 || right.len() < 4 {
        return Err(Error::domain(format!(
            "split at {split_point} leaves {} and {} points; use plain Silverman instead",
            left.len(),
            right.len()
        )));
    }
    Ok((silverman_sorted(left)?, silverman_sorted(right)?))
}

#[derive(Debug, Clone)]
struct Component {
    start: usize,
    end: usize,
    bandwidth: f64,
}

/// A fitted estimator `(1 / N) sum_c sum_{j in c} K((x - X_j) / e_c) / e_c`;
/// a single component unless fitted per mode.
#[derive(Debug, Clone)]
pub struct KdeModel {
    sorted: Vec<f64>,
    kernel: KernelSpec,
    components: Vec<Component>,
    // Prefix sums of 1, y and y^2 for y = X - center (Epanechnikov only).
    center: f64,
    prefix: Option<[Vec<f64>; 2]>,
}

/// Grid step of the binned Gaussian evaluation, in bandwidth units.
const BIN_FRACTION: f64 = 1.0 / 128.0;

impl KdeModel {
    pub fn fit(sample: &[f64], kernel: KernelSpec, rule: &BandwidthRule) -> Result<Self> {
        let sorted = sorted_copy(sample)?;
        let n = sorted.len();
        if n == 0 {
            return Err(Error::domain("empty sample"));
        }
        let components = match rule {
            BandwidthRule::MiseOptimal(reference) => vec![Component {
                start: 0,
                end: n,
                bandwidth: mise_bandwidth(&kernel, reference, n)?,
            }],
            BandwidthRule::Silverman => vec![Component {
                start: 0,
                end: n,
                bandwidth: silverman_sorted(&sorted)?,
            }],
            BandwidthRule::SilvermanPerMode { split_point } => {
                let k = sorted.partition_point(|&x| x < *split_point);
                if k < 4 || n - k < 4 {
                    return Err(Error::domain(format!(
                        "split at {split_point} leaves {k} and {} points; use plain Silverman instead",
                        n - k
                    )));
                }
                vec![
                    Component {
                        start: 0,
                        end: k,
                        bandwidth: silverman_sorted(&sorted[..k])?,
                    },
                    Component {
                        start: k,
                        end: n,
                        bandwidth: silverman_sorted(&sorted[k..])?,
                    },
                ]
            }
            BandwidthRule::Fixed(eps) => {
                if !(*eps > 0.0 && eps.is_finite()) {
                    return Err(Error::domain("bandwidth must be positive"));
                }
                vec![Component {
                    start: 0,
                    end: n,
                    bandwidth: *eps,
                }]
            }
        };
        Ok(Self::from_parts(sorted, kernel, components))
    }

    /// One component with a given bandwidth.
    pub fn with_bandwidth(sample: &[f64], kernel: KernelSpec, bandwidth: f64) -> Result<Self> {
        Self::fit(sample, kernel, &BandwidthRule::Fixed(bandwidth))
    }

    fn from_parts(sorted: Vec<f64>, kernel: KernelSpec, components: Vec<Component>) -> Self {
        let n = sorted.len();
        let center = sorted[n / 2];
        let prefix = (kernel.kind == KernelKind::Epanechnikov).then(|| {
            let mut p1 = Vec::with_capacity(n + 1);
            let mut p2 = Vec::with_capacity(n + 1);
            let (mut s1, mut s2) = (0.0, 0.0);
            p1.push(0.0);
            p2.push(0.0);
            for &x in &sorted {
                let y = x - center;
                s1 += y;
                s2 += y * y;
                p1.push(s1);
                p2.push(s2);
            }
            [p1, p2]
        });
        KdeModel {
            sorted,
            kernel,
            components,
            center,
            prefix,
        }
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn sorted_sample(&self) -> &[f64] {
        &self.sorted
    }

    /// Bandwidth of each component, left to right.
    pub fn bandwidths(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.bandwidth).collect()
    }

    fn window(&self, c: &Component, x: f64, half: f64) -> (usize, usize) {
        let part = &self.sorted[c.start..c.end];
        let lo = part.partition_point(|&s| s < x - half);
        let hi = part.partition_point(|&s| s <= x + half);
        (c.start + lo, c.start + hi)
    }

    /// Estimator value at `x`. Only sample points within the kernel's reach
    /// contribute; they are located by binary search.
    pub fn evaluate(&self, x: f64) -> f64 {
        let n = self.sorted.len() as f64;
        let mut total = 0.0;
        for c in &self.components {
            let e = c.bandwidth;
            let (lo, hi) = self.window(c, x, e * self.kernel.reach());
            let sum = match (&self.prefix, self.kernel.kind) {
                (Some([p1, p2]), KernelKind::Epanechnikov) => {
                    // sum 3/4 (1 - (x - X)^2 / e^2) over the window, expanded
                    // in moments of y = X - center.
                    let m0 = (hi - lo) as f64;
                    let m1 = p1[hi] - p1[lo];
                    let m2 = p2[hi] - p2[lo];
                    let u = x - self.center;
                    let sq = u * u * m0 - 2.0 * u * m1 + m2;
                    (0.75 * (m0 - sq / (e * e))).max(0.0)
                }
                _ => self.sorted[lo..hi].iter().map(|s| self.kernel.value((x - s) / e)).sum(),
            };
            total += sum / e;
        }
        total / n
    }

    /// Direct kernel sum over the window, without moment shortcuts.
    pub fn evaluate_direct(&self, x: f64) -> f64 {
        let n = self.sorted.len() as f64;
        self.components
            .iter()
            .map(|c| {
                let e = c.bandwidth;
                let (lo, hi) = self.window(c, x, e * self.kernel.reach());
                self.sorted[lo..hi]
                    .iter()
                    .map(|s| self.kernel.value((x - s) / e))
                    .sum::<f64>()
                    / e
            })
            .sum::<f64>()
            / n
    }

    /// Batch evaluation. Epanechnikov values are exact; Gaussian components
    /// are linearly binned onto a grid of step `e / 128`, convolved with the
    /// sampled kernel and linearly interpolated.
    pub fn evaluate_many(&self, xs: &[f64]) -> Vec<f64> {
        match self.kernel.kind {
            KernelKind::Epanechnikov => xs.par_iter().map(|&x| self.evaluate(x)).collect(),
            KernelKind::Gaussian => {
                let mut out = vec![0.0; xs.len()];
                for c in &self.components {
                    let binned = self.binned_component(c);
                    out.par_iter_mut()
                        .zip(xs.par_iter())
                        .for_each(|(o, &x)| *o += binned.interpolate(x));
                }
                out
            }
        }
    }

    fn binned_component(&self, c: &Component) -> BinnedDensity {
        let part = &self.sorted[c.start..c.end];
        let e = c.bandwidth;
        let step = e * BIN_FRACTION;
        let reach = self.kernel.reach() * e;
        let half = (reach / step).ceil() as usize;
        let lo = part[0] - (half + 1) as f64 * step;
        let span = part[part.len() - 1] - part[0];
        let m = (span / step).ceil() as usize + 2 * half + 3;
        let mut counts = vec![0.0; m];
        for &x in part {
            let pos = (x - lo) / step;
            let i = pos.floor() as usize;
            let w = pos - i as f64;
            counts[i] += 1.0 - w;
            counts[i + 1] += w;
        }
        let n = self.sorted.len() as f64;
        let kernel: Vec<f64> = (0..=2 * half)
            .map(|j| self.kernel.value((j as f64 - half as f64) * step / e) / (e * n))
            .collect();
        BinnedDensity {
            lo,
            step,
            values: convolve_centered(&counts, &kernel),
        }
    }
}

struct BinnedDensity {
    lo: f64,
    step: f64,
    values: Vec<f64>,
}

impl BinnedDensity {
    fn interpolate(&self, x: f64) -> f64 {
        let pos = (x - self.lo) / self.step;
        if !(pos >= 0.0) || pos >= (self.values.len() - 1) as f64 {
            return 0.0;
        }
        let i = pos.floor() as usize;
        let w = pos - i as f64;
        ((1.0 - w) * self.values[i] + w * self.values[i + 1]).max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg_normals(n: usize, seed: u64) -> Vec<f64> {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn kernel_constants() {
        let e = KernelSpec::epanechnikov();
        assert_eq!((e.r_k, e.m2_k), (0.6, 0.2));
        let g = KernelSpec::gaussian();
        assert!((g.r_k - 0.282_094_791_773_878_14).abs() < 1e-15);
        assert_eq!(g.m2_k, 1.0);
        assert_eq!(e.value(0.0), 0.75);
        assert_eq!(e.value(1.5), 0.0);
    }

    #[test]
    fn gaussian_reference_bandwidth() {
        let reference = ClosedFormDensity::gaussian(0.0, 1.0).unwrap();
        let c = mise_bandwidth(&KernelSpec::gaussian(), &reference, 1).unwrap();
        assert!((c - (4.0f64 / 3.0).powf(0.2)).abs() < 1e-12);
        assert!((c - 1.0592).abs() < 1e-4);
        let e = mise_bandwidth(&KernelSpec::gaussian(), &reference, 100_000).unwrap();
        assert!((e - 0.10592).abs() < 1e-5);
    }

    #[test]
    fn epanechnikov_uses_exact_constants() {
        let reference = ClosedFormDensity::gaussian(0.0, 1.0).unwrap();
        let r = curvature_integral(&reference).unwrap();
        let c = mise_bandwidth(&KernelSpec::epanechnikov(), &reference, 1).unwrap();
        assert!((c - 0.6f64.powf(0.2) / (0.2f64.powf(0.4) * r.powf(0.2))).abs() < 1e-15);
    }

    #[test]
    fn bang_bang_curvature_against_symbolic_value() {
        let bb = ClosedFormDensity::bang_bang(1.0, 1.0, 0.0).unwrap();
        let r = curvature_integral(&bb).unwrap();
        // 2 * int_0^inf p''(z)^2 dz from symbolic differentiation.
        assert!((r - 9.044_681_715_751_165).abs() < 1e-5, "{r}");
    }

    #[test]
    fn silverman_examples() {
        // sd = sqrt(5/3), IQR = 2.25 - 0.75 = 1.5, so the IQR branch wins.
        let e = silverman_bandwidth(&[0.0, 1.0, 2.0, 3.0]).unwrap();
        let hand = 0.9 * (1.5 / 1.34) * 4f64.powf(-0.2);
        assert!((e - hand).abs() < 1e-14, "{e}");
        assert!((e - 0.763_514).abs() < 1e-6);
        assert!((silverman_formula(1.0, 1.34, 1).unwrap() - 0.9).abs() < 1e-15);
        let scaled = silverman_bandwidth(&[0.0, 10.0, 20.0, 30.0]).unwrap();
        assert!((scaled - 10.0 * e).abs() < 1e-12);
        assert!(silverman_bandwidth(&[1.0; 8]).is_err());
        assert!(silverman_bandwidth(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn per_mode_symmetry_and_starvation() {
        let s = [-4.0, -3.0, -2.5, -1.0, 1.0, 2.5, 3.0, 4.0];
        let (l, r) = silverman_per_mode(&s, 0.0).unwrap();
        assert!((l - r).abs() < 1e-15);
        assert!(silverman_per_mode(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.0).is_err());
    }

    #[test]
    fn evaluate_examples() {
        let m = KdeModel::with_bandwidth(&[0.0], KernelSpec::epanechnikov(), 1.0).unwrap();
        assert_eq!(m.evaluate(0.0), 0.75);
        let g = KdeModel::with_bandwidth(&[-1.0, 1.0], KernelSpec::gaussian(), 1.0).unwrap();
        assert!((g.evaluate(0.0) - 0.241_970_724_519_143_37).abs() < 1e-15);
    }

    #[test]
    fn moment_shortcut_matches_direct_sum() {
        let xs = lcg_normals(5000, 1);
        let m = KdeModel::with_bandwidth(&xs, KernelSpec::epanechnikov(), 0.3).unwrap();
        for i in 0..200 {
            let x = -4.0 + 8.0 * i as f64 / 199.0;
            assert!((m.evaluate(x) - m.evaluate_direct(x)).abs() < 1e-12);
        }
    }

    #[test]
    fn binned_gaussian_matches_exact() {
        let xs = lcg_normals(20_000, 2);
        let m = KdeModel::fit(&xs, KernelSpec::gaussian(), &BandwidthRule::Silverman).unwrap();
        let q: Vec<f64> = (0..400).map(|i| -5.0 + 10.0 * i as f64 / 399.0).collect();
        let fast = m.evaluate_many(&q);
        for (x, f) in q.iter().zip(&fast) {
            let exact = m.evaluate(*x);
            assert!((exact - f).abs() < 2e-5 * 0.4, "x={x}: {exact} vs {f}");
        }
    }

    #[test]
    fn normalization_and_translation() {
        let xs = lcg_normals(10_000, 3);
        for kernel in [KernelSpec::epanechnikov(), KernelSpec::gaussian()] {
            for rule in [
                BandwidthRule::Silverman,
                BandwidthRule::SilvermanPerMode { split_point: 0.0 },
            ] {
                let m = KdeModel::fit(&xs, kernel, &rule).unwrap();
                let grid: Vec<f64> = (0..8001).map(|i| -8.0 + 16.0 * i as f64 / 8000.0).collect();
                let v = m.evaluate_many(&grid);
                assert!(v.iter().all(|p| *p >= 0.0));
                let mass = trapezoid(&v, 16.0 / 8000.0);
                assert!((mass - 1.0).abs() < 1e-3, "{kernel:?} {rule:?}: {mass}");
            }
        }
        let shifted: Vec<f64> = xs.iter().map(|x| x + 2.5).collect();
        let a = KdeModel::with_bandwidth(&xs, KernelSpec::gaussian(), 0.2).unwrap();
        let b = KdeModel::with_bandwidth(&shifted, KernelSpec::gaussian(), 0.2).unwrap();
        for x in [-1.0, 0.0, 0.7] {
            assert!((a.evaluate(x) - b.evaluate(x + 2.5)).abs() < 1e-12);
        }
    }

    proptest::proptest! {
        #[test]
        fn shortcut_agrees_and_stays_nonnegative(
            xs in proptest::collection::vec(-3.0f64..3.0, 1..80),
            bw in 0.05f64..2.0,
            at in -5.0f64..5.0,
        ) {
            let m = KdeModel::with_bandwidth(&xs, KernelSpec::epanechnikov(), bw).unwrap();
            let (fast, direct) = (m.evaluate(at), m.evaluate_direct(at));
            proptest::prop_assert!(fast >= 0.0);
            proptest::prop_assert!((fast - direct).abs() <= 1e-10 * (1.0 + direct));
        }
    }
}
