//! Empirical convergence orders, theoretical error ratios, and numerical
//! checks of two auxiliary inequalities used in the rate analysis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Least-squares line through `(ln h, ln error)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub log_h: Vec<f64>,
    pub log_error: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

impl RateFit {
    pub fn points(&self) -> usize {
        self.log_h.len()
    }
}

/// Ordinary least squares of `ln error` on `ln h`; the slope is the
/// empirical order.
pub fn fit_order(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(Error::domain(format!("need at least 3 points, got {}", points.len())));
    }
    if points
        .iter()
        .any(|&(h, e)| !(h > 0.0 && e > 0.0 && h.is_finite() && e.is_finite()))
    {
        return Err(Error::domain("step sizes and errors must be positive"));
    }
    let log_h: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let log_error: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = points.len() as f64;
    let mx = log_h.iter().sum::<f64>() / n;
    let my = log_error.iter().sum::<f64>() / n;
    let sxx: f64 = log_h.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = log_h.iter().zip(&log_error).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = log_error.iter().map(|y| (y - my) * (y - my)).sum();
    if !(sxx > 0.0) {
        return Err(Error::domain("all step sizes are equal"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Ok(RateFit {
        log_h,
        log_error,
        slope,
        intercept,
        r_squared,
    })
}

/// `2 (1 + ln(T/h)) / (1 + ln(2T/h))`, the ratio between consecutive
/// errors predicted by an `(1 + ln(T/h)) h` rate.
pub fn theoretical_ratio(horizon: f64, h: f64) -> Result<f64> {
    if !(h > 0.0 && horizon > 0.0) || h > horizon {
        return Err(Error::domain(format!("need 0 < h <= T, got h={h}, T={horizon}")));
    }
    let l = (horizon / h).ln();
    Ok(2.0 * (1.0 + l) / (1.0 + l + 2f64.ln()))
}

// Neumaier-compensated sum.
fn compensated_sum<I: Iterator<Item = f64>>(terms: I) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for t in terms {
        let s = sum + t;
        if sum.abs() >= t.abs() {
            c += (sum - s) + t;
        } else {
            c += (t - s) + sum;
        }
        sum = s;
    }
    sum + c
}

/// `pi - 2/n - sum_{k=1}^{n-1} 1 / sqrt(k (n - k))`.
pub fn sum_bound_slack(n: u64) -> f64 {
    let nf = n as f64;
    let sum = compensated_sum((1..n).map(|k| {
        let k = k as f64;
        1.0 / (k.sqrt() * (nf - k).sqrt())
    }));
    std::f64::consts::PI - 2.0 / nf - sum
}

/// Checks `sum_{k=1}^{n-1} 1 / sqrt(k (n - k)) <= pi - 2/n` for every
/// `2 <= n <= n_max` and returns the smallest slack.
pub fn verify_sum_bound(n_max: u64) -> Result<f64> {
    if n_max < 2 {
        return Err(Error::domain("n_max must be at least 2"));
    }
    let mut worst = f64::INFINITY;
    for n in 2..=n_max {
        let slack = sum_bound_slack(n);
        if slack < 0.0 {
            return Err(Error::Hypothesis {
                index: n as usize,
                detail: format!("sum exceeds pi - 2/n by {}", -slack),
            });
        }
        worst = worst.min(slack);
    }
    Ok(worst)
}

/// Discrete Gronwall bound. Given nonnegative `y, f, g` with
/// `y_n <= f_n + sum_{i<n} g_i y_i`, returns
/// `b_n = f_n + sum_{i<n} f_i g_i exp(sum_{j=i+1}^{n-1} g_j)` after checking
/// `y_n <= b_n`.
pub fn discrete_gronwall(y: &[f64], f: &[f64], g: &[f64]) -> Result<Vec<f64>> {
    let n = y.len();
    if f.len() != n || g.len() != n {
        return Err(Error::domain("sequences differ in length"));
    }
    for (name, s) in [("y", y), ("f", f), ("g", g)] {
        if let Some(i) = s.iter().position(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Hypothesis {
                index: i,
                detail: format!("{name}[{i}] = {} is not a nonnegative number", s[i]),
            });
        }
    }
    let slack = |v: f64| 1e-12 * v.abs().max(1.0);
    let mut running = 0.0;
    for k in 0..n {
        let rhs = f[k] + running;
        if y[k] > rhs + slack(rhs) {
            return Err(Error::Hypothesis {
                index: k,
                detail: format!("y = {} exceeds f + sum g y = {rhs}", y[k]),
            });
        }
        running += g[k] * y[k];
    }
    let mut prefix = vec![0.0; n + 1];
    for k in 0..n {
        prefix[k + 1] = prefix[k] + g[k];
    }
    let mut bound = Vec::with_capacity(n);
    for k in 0..n {
        let tail = compensated_sum((0..k).map(|i| f[i] * g[i] * (prefix[k] - prefix[i + 1]).exp()));
        let b = f[k] + tail;
        if y[k] > b + slack(b) {
            return Err(Error::Hypothesis {
                index: k,
                detail: format!("y = {} exceeds the Gronwall bound {b}", y[k]),
            });
        }
        bound.push(b);
    }
    Ok(bound)
}
