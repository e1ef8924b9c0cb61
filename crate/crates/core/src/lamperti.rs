//! Lamperti change of variables for one-dimensional SDEs
//! `dY = beta(t, Y) dt + sigma(Y) dW`: with `psi(y) = \int_z^y dw / sigma(w)`,
//! `X = psi(Y)` has unit diffusion and drift `(beta / sigma - sigma' / 2) o psi^{-1}`.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::DriftSpec;
use crate::quadrature::{integrate, Tolerance};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Fritsch-Carlson monotone cubic Hermite interpolant.
#[derive(Debug, Clone)]
struct MonotoneCubic {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl MonotoneCubic {
    fn new(xs: Vec<f64>, ys: Vec<f64>) -> Self {
        let n = xs.len();
        let secant: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i])).collect();
        let mut slopes = vec![0.0; n];
        slopes[0] = secant[0];
        slopes[n - 1] = secant[n - 2];
        for i in 1..n - 1 {
            let (a, b) = (secant[i - 1], secant[i]);
            slopes[i] = if a * b <= 0.0 {
                0.0
            } else {
                let (h0, h1) = (xs[i] - xs[i - 1], xs[i + 1] - xs[i]);
                let (w1, w2) = (2.0 * h1 + h0, h1 + 2.0 * h0);
                (w1 + w2) / (w1 / a + w2 / b)
            };
        }
        MonotoneCubic { xs, ys, slopes }
    }

    fn segment(&self, x: f64) -> usize {
        match self.xs.binary_search_by(|v| v.total_cmp(&x)) {
            Ok(i) => i.min(self.xs.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.xs.len() - 2),
        }
    }

    fn eval(&self, x: f64) -> f64 {
        let i = self.segment(x);
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.ys[i] + h10 * h * self.slopes[i] + h01 * self.ys[i + 1] + h11 * h * self.slopes[i + 1]
    }
}

/// Tabulated `psi` and its inverse on a closed sub-interval of `(l, r)`.
#[derive(Clone)]
pub struct LampertiTransform {
    sigma: ScalarFn,
    sigma_prime: Option<ScalarFn>,
    anchor: f64,
    nodes: Vec<f64>,
    psi_nodes: Vec<f64>,
    inverse: MonotoneCubic,
}

impl std::fmt::Debug for LampertiTransform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LampertiTransform")
            .field("anchor", &self.anchor)
            .field("span", &self.span())
            .field("psi_range", &self.psi_range())
            .finish_non_exhaustive()
    }
}

impl LampertiTransform {
    /// Tabulates `psi` on `span = [a, b]`, which must lie inside the open
    /// domain `(l, r)` of `sigma` and contain `anchor`. Nodes cluster towards
    /// both ends of the span.
    pub fn tabulate(
        sigma: ScalarFn,
        sigma_prime: Option<ScalarFn>,
        domain: (f64, f64),
        anchor: f64,
        span: (f64, f64),
        n_nodes: usize,
    ) -> Result<Self> {
        let (l, r) = domain;
        let (a, b) = span;
        if !(l < a && a <= anchor && anchor <= b && b < r) || !(a < b) {
            return Err(Error::domain(format!(
                "need l < a <= z <= b < r, got l={l}, a={a}, z={anchor}, b={b}, r={r}"
            )));
        }
        if n_nodes < 4 {
            return Err(Error::domain("Lamperti tabulation needs at least 4 nodes"));
        }
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        let mut nodes: Vec<f64> = (0..n_nodes)
            .map(|i| mid - half * (PI * i as f64 / (n_nodes - 1) as f64).cos())
            .collect();
        nodes[0] = a;
        nodes[n_nodes - 1] = b;

        let inv_sigma = |w: f64| 1.0 / sigma(w);
        for &y in &nodes {
            let s = sigma(y);
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::domain(format!("sigma({y}) = {s} is not positive")));
            }
        }
        let tol = Tolerance {
            abs: 1e-15,
            rel: 1e-14,
            max_intervals: 200,
        };
        let mut psi_nodes = Vec::with_capacity(n_nodes);
        psi_nodes.push(0.0);
        for w in nodes.windows(2) {
            let piece = integrate(inv_sigma, w[0], w[1], tol)?.value;
            psi_nodes.push(psi_nodes.last().unwrap() + piece);
        }
        let offset = integrate(inv_sigma, a, anchor, tol)?.value;
        psi_nodes.iter_mut().for_each(|p| *p -= offset);
        if psi_nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::domain("psi is not strictly increasing on the span"));
        }
        let inverse = MonotoneCubic::new(psi_nodes.clone(), nodes.clone());
        Ok(LampertiTransform {
            sigma,
            sigma_prime,
            anchor,
            nodes,
            psi_nodes,
            inverse,
        })
    }

    pub fn anchor(&self) -> f64 {
        self.anchor
    }

    pub fn span(&self) -> (f64, f64) {
        (self.nodes[0], self.nodes[self.nodes.len() - 1])
    }

    pub fn psi_range(&self) -> (f64, f64) {
        (self.psi_nodes[0], self.psi_nodes[self.psi_nodes.len() - 1])
    }

    pub fn sigma(&self, y: f64) -> f64 {
        (self.sigma)(y)
    }

    /// `sigma'(y)`, by central difference with step `1e-6 (1 + |y|)` when no
    /// derivative was supplied.
    pub fn sigma_prime(&self, y: f64) -> f64 {
        match &self.sigma_prime {
            Some(f) => f(y),
            None => {
                let step = 1e-6 * (1.0 + y.abs());
                ((self.sigma)(y + step) - (self.sigma)(y - step)) / (2.0 * step)
            }
        }
    }

    pub fn psi(&self, y: f64) -> Result<f64> {
        let (a, b) = self.span();
        if !(y >= a && y <= b) {
            return Err(Error::Range { value: y, lo: a, hi: b });
        }
        let i = match self.nodes.binary_search_by(|v| v.total_cmp(&y)) {
            Ok(i) => return Ok(self.psi_nodes[i]),
            Err(i) => i - 1,
        };
        let tol = Tolerance {
            abs: 1e-15,
            rel: 1e-14,
            max_intervals: 200,
        };
        let piece = integrate(|w| 1.0 / (self.sigma)(w), self.nodes[i], y, tol)?.value;
        Ok(self.psi_nodes[i] + piece)
    }

    /// `psi^{-1}(x)`: monotone cubic interpolation of the tabulated pairs,
    /// refined by safeguarded Newton steps on `psi(y) = x`.
    pub fn psi_inverse(&self, x: f64) -> Result<f64> {
        let (lo, hi) = self.psi_range();
        if !(x >= lo && x <= hi) {
            return Err(Error::Range { value: x, lo, hi });
        }
        let seg = self.inverse.segment(x);
        let (mut ya, mut yb) = (self.nodes[seg], self.nodes[seg + 1]);
        let mut y = self.inverse.eval(x).clamp(ya, yb);
        for _ in 0..8 {
            let f = self.psi(y)? - x;
            if f.abs() <= 1e-15 * (1.0 + x.abs()) {
                break;
            }
            if f > 0.0 {
                yb = y;
            } else {
                ya = y;
            }
            let next = y - f * (self.sigma)(y);
            y = if next > ya && next < yb { next } else { 0.5 * (ya + yb) };
        }
        Ok(y)
    }

    /// Unit-diffusion drift at `x`: `beta(t, y) / sigma(y) - sigma'(y) / 2`
    /// with `y = psi^{-1}(x)`.
    pub fn drift<B: Fn(f64, f64) -> f64>(&self, beta: B, t: f64, x: f64) -> Result<f64> {
        let y = self.psi_inverse(x)?;
        Ok(beta(t, y) / (self.sigma)(y) - 0.5 * self.sigma_prime(y))
    }

    /// The transformed drift as a [`DriftSpec`]. Outside the tabulated range
    /// the value at the nearest end is used; `bound` must dominate it.
    pub fn drift_spec<B>(&self, beta: B, bound: f64) -> Result<DriftSpec>
    where
        B: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        let lt = self.clone();
        let (lo, hi) = self.psi_range();
        DriftSpec::custom("lamperti", 1, bound, move |t, x, out| {
            let xc = x[0].clamp(lo, hi);
            out[0] = lt.drift(&beta, t, xc).unwrap_or(f64::NAN);
        })
    }
}

/// Free-function form of [`LampertiTransform::drift`].
pub fn lamperti_drift<B: Fn(f64, f64) -> f64>(lt: &LampertiTransform, beta: B, t: f64, x: f64) -> Result<f64> {
    lt.drift(beta, t, x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> LampertiTransform {
        LampertiTransform::tabulate(
            Arc::new(|_| 1.0),
            None,
            (f64::NEG_INFINITY, f64::INFINITY),
            0.0,
            (-10.0, 10.0),
            64,
        )
        .unwrap()
    }

    fn geometric() -> LampertiTransform {
        LampertiTransform::tabulate(Arc::new(|y| y), None, (0.0, f64::INFINITY), 1.0, (1e-3, 1e3), 513).unwrap()
    }

    #[test]
    fn unit_sigma_is_identity() {
        let lt = unit();
        assert!((lamperti_drift(&lt, |_, y| y, 0.0, 2.0).unwrap() - 2.0).abs() < 1e-12);
        assert!(lt.psi(0.0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn linear_sigma_gives_log() {
        let lt = geometric();
        assert!(lt.psi(1.0).unwrap().abs() < 1e-14);
        for y in [1e-3, 0.01, 0.5, 2.0, 17.0, 999.0] {
            assert!((lt.psi(y).unwrap() - y.ln()).abs() < 1e-11, "psi({y})");
        }
        let d = lamperti_drift(&lt, |_, _| 0.0, 0.0, 0.0).unwrap();
        assert!((d + 0.5).abs() < 1e-9, "{d}");
        let d = lamperti_drift(&lt, |_, y| y, 0.0, 2f64.ln()).unwrap();
        assert!((d - 0.5).abs() < 1e-9, "{d}");
    }

    #[test]
    fn inverse_round_trip() {
        let lt = LampertiTransform::tabulate(
            Arc::new(|y: f64| 1.0 + 0.5 * y.sin()),
            Some(Arc::new(|y: f64| 0.5 * y.cos())),
            (f64::NEG_INFINITY, f64::INFINITY),
            0.3,
            (-6.0, 6.0),
            257,
        )
        .unwrap();
        for i in 0..=200 {
            let y = -6.0 + 12.0 * i as f64 / 200.0;
            let back = lt.psi_inverse(lt.psi(y).unwrap()).unwrap();
            assert!((back - y).abs() < 1e-10, "y={y} back={back}");
        }
    }

    #[test]
    fn out_of_range_errors() {
        let lt = geometric();
        let (_, hi) = lt.psi_range();
        assert!(matches!(lt.psi_inverse(hi + 1.0), Err(Error::Range { .. })));
        assert!(matches!(lt.psi(2e3), Err(Error::Range { .. })));
    }

    #[test]
    fn rejects_span_outside_domain() {
        let r = LampertiTransform::tabulate(Arc::new(|y| y), None, (0.0, 10.0), 1.0, (0.0, 5.0), 16);
        assert!(r.is_err());
    }

    #[test]
    fn finite_difference_sigma_prime() {
        let lt = LampertiTransform::tabulate(
            Arc::new(|y: f64| 2.0 + y * y),
            None,
            (f64::NEG_INFINITY, f64::INFINITY),
            0.0,
            (-3.0, 3.0),
            32,
        )
        .unwrap();
        assert!((lt.sigma_prime(1.5) - 3.0).abs() < 1e-8);
    }
}
