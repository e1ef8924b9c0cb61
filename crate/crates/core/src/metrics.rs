//! Trapezoidal L1 distances between densities on sample abscissae, and
//! aggregation of Monte Carlo runs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::ClosedFormDensity;
use crate::kde::KdeModel;
use crate::sampler::EndpointSample;

/// Mean over runs with the half-width of its 95% normal confidence interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvEstimate {
    pub estimate: f64,
    pub run_values: Vec<f64>,
    pub variance: f64,
    pub precision: f64,
    pub n_runs: usize,
}

/// `sum_i (x_{i+1} - x_i) (|f_{i+1} - g_{i+1}| + |f_i - g_i|) / 2` over
/// sorted abscissae.
pub fn trapezoid_l1(abscissae: &[f64], f: &[f64], g: &[f64]) -> Result<f64> {
    let n = abscissae.len();
    if f.len() != n || g.len() != n {
        return Err(Error::domain("abscissae and values differ in length"));
    }
    if n < 2 {
        return Err(Error::domain("need at least two abscissae"));
    }
    if abscissae.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::domain("abscissae must be finite and sorted"));
    }
    if !(abscissae[n - 1] > abscissae[0]) {
        return Err(Error::domain("abscissae span zero width"));
    }
    let mut total = 0.0;
    let mut prev = (f[0] - g[0]).abs();
    for i in 1..n {
        let cur = (f[i] - g[i]).abs();
        total += 0.5 * (abscissae[i] - abscissae[i - 1]) * (cur + prev);
        prev = cur;
    }
    Ok(total)
}

/// [`trapezoid_l1`] with both densities given as functions.
pub fn trapezoid_l1_fn<F, G>(abscissae: &[f64], f: F, g: G) -> Result<f64>
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    let fv: Vec<f64> = abscissae.iter().map(|&x| f(x)).collect();
    let gv: Vec<f64> = abscissae.iter().map(|&x| g(x)).collect();
    trapezoid_l1(abscissae, &fv, &gv)
}

fn order_statistics(sample: &EndpointSample) -> Result<Vec<f64>> {
    if sample.dimension != 1 {
        return Err(Error::domain("L1 estimates use one-dimensional samples"));
    }
    if sample.len() < 2 {
        return Err(Error::domain("need at least two sample points"));
    }
    let mut xs = sample.values.clone();
    xs.sort_by(f64::total_cmp);
    Ok(xs)
}

/// L1 distance between a KDE and the exact density, by the trapezoid rule
/// on the order statistics of `sample`.
pub fn trapezoid_l1_vs_exact(sample: &EndpointSample, kde: &KdeModel, exact: &ClosedFormDensity) -> Result<f64> {
    let xs = order_statistics(sample)?;
    let f = kde.evaluate_many(&xs);
    let g: Vec<f64> = xs.iter().map(|&x| exact.density(x)).collect();
    trapezoid_l1(&xs, &f, &g)
}

/// L1 distance between the KDEs at steps `h` and `h / 2`, by the trapezoid
/// rule on the order statistics of the `h`-sample.
pub fn trapezoid_l1_self(sample_h: &EndpointSample, kde_h: &KdeModel, kde_half: &KdeModel) -> Result<f64> {
    let xs = order_statistics(sample_h)?;
    let f = kde_h.evaluate_many(&xs);
    let g = kde_half.evaluate_many(&xs);
    trapezoid_l1(&xs, &f, &g)
}

/// Mean, unbiased variance and `1.96 sqrt(variance / R)` of per-run values,
/// summed in run order.
pub fn aggregate_runs(per_run: &[f64]) -> Result<TvEstimate> {
    let r = per_run.len();
    if r < 2 {
        return Err(Error::domain(format!("need at least two runs for a variance, got {r}")));
    }
    if per_run.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("run values must be finite"));
    }
    let mean = per_run.iter().sum::<f64>() / r as f64;
    let variance = per_run.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (r - 1) as f64;
    Ok(TvEstimate {
        estimate: mean,
        run_values: per_run.to_vec(),
        variance,
        precision: 1.96 * (variance / r as f64).sqrt(),
        n_runs: r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kde::{KdeModel, KernelSpec};
    use crate::quadrature::{integrate_with_breaks, Tolerance};
    use crate::special::normal_cdf;
    use proptest::prelude::*;

    fn mesh(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn shifted_gaussians() {
        let a = ClosedFormDensity::gaussian(0.0, 1.0).unwrap();
        let b = ClosedFormDensity::gaussian(2.0, 1.0).unwrap();
        let xs = mesh(-12.0, 14.0, 200_001);
        let l1 = trapezoid_l1_fn(&xs, |x| a.density(x), |x| b.density(x)).unwrap();
        let oracle = 2.0 * (2.0 * normal_cdf(1.0) - 1.0);
        assert!((l1 - oracle).abs() < 1e-6, "{l1}");
        assert!((oracle - 1.365_379).abs() < 1e-6);
        assert!(l1 <= 2.0);
    }

    #[test]
    fn matches_adaptive_quadrature() {
        let a = ClosedFormDensity::bang_bang(1.0, 1.0, 0.0).unwrap();
        let b = ClosedFormDensity::laplace(1.0).unwrap();
        let xs = mesh(-20.0, 20.0, 400_001);
        let l1 = trapezoid_l1_fn(&xs, |x| a.density(x), |x| b.density(x)).unwrap();
        // The difference is even; find its sign changes on the right half.
        let d = |x: f64| a.density(x) - b.density(x);
        let mut breaks = vec![-20.0, 0.0];
        let grid = mesh(0.0, 20.0, 20_001);
        for w in grid.windows(2) {
            if d(w[0]) * d(w[1]) < 0.0 {
                let (mut lo, mut hi) = (w[0], w[1]);
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if d(lo) * d(mid) <= 0.0 {
                        hi = mid
                    } else {
                        lo = mid
                    }
                }
                breaks.push(0.5 * (lo + hi));
            }
        }
        breaks.push(20.0);
        let mut all: Vec<f64> = breaks.iter().filter(|b| **b > 0.0 && **b < 20.0).map(|b| -b).collect();
        all.extend(breaks);
        all.sort_by(f64::total_cmp);
        let q = integrate_with_breaks(|x| d(x).abs(), &all, Tolerance::abs(1e-12))
            .unwrap()
            .value;
        assert!((l1 - q).abs() < 1e-4, "{l1} vs {q}");
    }

    #[test]
    fn identical_models_give_zero() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 1000) as f64 / 100.0).collect();
        let sample = EndpointSample {
            values: xs.clone(),
            dimension: 1,
            h: 0.1,
            horizon: 1.0,
            master_seed: 0,
            paths: None,
        };
        let kde = KdeModel::with_bandwidth(&xs, KernelSpec::epanechnikov(), 0.5).unwrap();
        assert_eq!(trapezoid_l1_self(&sample, &kde, &kde).unwrap(), 0.0);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(trapezoid_l1(&[1.0, 1.0, 1.0], &[0.0; 3], &[1.0; 3]).is_err());
        assert!(trapezoid_l1(&[0.0], &[0.0], &[0.0]).is_err());
        assert!(trapezoid_l1(&[1.0, 0.0], &[0.0; 2], &[0.0; 2]).is_err());
        // Duplicates inside a wider range are zero-width panels.
        let v = trapezoid_l1(&[0.0, 1.0, 1.0, 2.0], &[1.0; 4], &[0.0; 4]).unwrap();
        assert!((v - 2.0).abs() < 1e-15);
    }

    #[test]
    fn aggregate_examples() {
        let a = aggregate_runs(&[1.0, 1.0, 1.0]).unwrap();
        assert_eq!((a.estimate, a.precision), (1.0, 0.0));
        let b = aggregate_runs(&[0.0, 2.0]).unwrap();
        assert_eq!((b.estimate, b.variance), (1.0, 2.0));
        assert!((b.precision - 1.96).abs() < 1e-15);
        assert!(aggregate_runs(&[1.0]).is_err());
    }

    fn sorted_mesh() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-5.0f64..5.0, 2..60).prop_map(|mut v| {
            v.sort_by(f64::total_cmp);
            v.push(v[v.len() - 1] + 1.0);
            v
        })
    }

    proptest! {
        #[test]
        fn symmetric_and_triangle(xs in sorted_mesh(), seed in 0u64..1000) {
            let n = xs.len();
            let val = |k: u64| -> Vec<f64> {
                (0..n).map(|i| (((i as u64 + 1) * (seed + k) * 2654435761) % 1000) as f64 / 500.0).collect()
            };
            let (f, g, m) = (val(1), val(2), val(3));
            let fg = trapezoid_l1(&xs, &f, &g).unwrap();
            prop_assert_eq!(fg, trapezoid_l1(&xs, &g, &f).unwrap());
            prop_assert!(fg >= 0.0);
            let fm = trapezoid_l1(&xs, &f, &m).unwrap();
            let mg = trapezoid_l1(&xs, &m, &g).unwrap();
            prop_assert!(fg <= fm + mg + 1e-12);
        }
    }
}
