//! Densities tabulated on uniform one-dimensional grids.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// A density sampled at `n` equally spaced points covering `[x_min, x_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    x_min: f64,
    x_max: f64,
    values: Vec<f64>,
    time: f64,
}

impl DensityGrid {
    pub fn new(x_min: f64, x_max: f64, values: Vec<f64>, time: f64) -> Result<Self> {
        let n = values.len();
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::domain(format!("grid size must be a power of two >= 2, got {n}")));
        }
        if !(x_min < x_max) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(Error::domain(format!("invalid grid extent [{x_min}, {x_max}]")));
        }
        if !(time >= 0.0) {
            return Err(Error::domain("grid time stamp must be nonnegative"));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::domain("grid values must be finite and nonnegative"));
        }
        Ok(DensityGrid {
            x_min,
            x_max,
            values,
            time,
        })
    }

    /// Tabulates `f` at the grid nodes. Negative round-off is clamped to zero.
    pub fn from_fn<F: Fn(f64) -> f64>(x_min: f64, x_max: f64, n: usize, time: f64, f: F) -> Result<Self> {
        if n < 2 {
            return Err(Error::domain("grid needs at least two points"));
        }
        let dx = (x_max - x_min) / (n - 1) as f64;
        let values = (0..n).map(|i| f(x_min + i as f64 * dx).max(0.0)).collect();
        Self::new(x_min, x_max, values, time)
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn spacing(&self) -> f64 {
        (self.x_max - self.x_min) / (self.values.len() - 1) as f64
    }

    pub fn abscissa(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.spacing()
    }

    pub fn abscissae(&self) -> impl Iterator<Item = f64> + '_ {
        let dx = self.spacing();
        (0..self.values.len()).map(move |i| self.x_min + i as f64 * dx)
    }

    /// Trapezoid-rule mass.
    pub fn mass(&self) -> f64 {
        trapezoid(&self.values, self.spacing())
    }

    /// Linear interpolation; zero outside the grid.
    pub fn interpolate(&self, x: f64) -> f64 {
        if !(x >= self.x_min && x <= self.x_max) {
            return 0.0;
        }
        let dx = self.spacing();
        let pos = (x - self.x_min) / dx;
        let i = (pos.floor() as usize).min(self.values.len() - 2);
        let w = pos - i as f64;
        self.values[i] * (1.0 - w) + self.values[i + 1] * w
    }

    /// Trapezoid L1 distance between two grids with identical layout.
    pub fn l1_distance(&self, other: &DensityGrid) -> Result<f64> {
        if self.values.len() != other.values.len()
            || (self.x_min - other.x_min).abs() > 1e-12 * self.spacing()
            || (self.x_max - other.x_max).abs() > 1e-12 * self.spacing()
        {
            return Err(Error::domain("grids have different layouts"));
        }
        let diff: Vec<f64> = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .collect();
        Ok(trapezoid(&diff, self.spacing()))
    }

    /// CSV with header `z,p`, 17 significant digits per value.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.values.len() * 48);
        out.push_str("z,p\n");
        for (z, p) in self.abscissae().zip(&self.values) {
            let _ = writeln!(out, "{z:.16e},{p:.16e}");
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Parses the CSV written by [`DensityGrid::to_csv`]. The abscissae must
    /// be uniform.
    pub fn from_csv(text: &str, time: f64) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == "z,p" => {}
            other => return Err(Error::domain(format!("expected header 'z,p', got {other:?}"))),
        }
        let mut zs = Vec::new();
        let mut ps = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (z, p) = line
                .split_once(',')
                .ok_or_else(|| Error::domain(format!("line {}: expected two fields", lineno + 2)))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::domain(format!("line {}: {e}", lineno + 2)))
            };
            zs.push(parse(z)?);
            ps.push(parse(p)?);
        }
        if zs.len() < 2 {
            return Err(Error::domain("grid CSV has fewer than two rows"));
        }
        let (lo, hi) = (zs[0], zs[zs.len() - 1]);
        let dx = (hi - lo) / (zs.len() - 1) as f64;
        for (i, z) in zs.iter().enumerate() {
            if (z - (lo + i as f64 * dx)).abs() > 1e-9 * dx.abs().max(1.0) {
                return Err(Error::domain(format!("row {} breaks uniform spacing", i + 2)));
            }
        }
        Self::new(lo, hi, ps, time)
    }

    pub fn read_csv(path: impl AsRef<Path>, time: f64) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, time).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// Composite trapezoid rule on uniformly spaced samples.
pub fn trapezoid(values: &[f64], dx: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => {
            let interior: f64 = values[1..n - 1].iter().sum();
            dx * (interior + 0.5 * (values[0] + values[n - 1]))
        }
    }
}
