//! Linear convolution of real sequences through zero-padded FFTs.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// Full linear convolution `out[k] = sum_j a[j] b[k - j]`, of length
/// `a.len() + b.len() - 1`.
pub fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let len = a.len() + b.len() - 1;
    let size = len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let mut fa: Vec<Complex<f64>> = a.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fa.resize(size, Complex::new(0.0, 0.0));
    let mut fb: Vec<Complex<f64>> = b.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fb.resize(size, Complex::new(0.0, 0.0));
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    let scale = 1.0 / size as f64;
    fa[..len].iter().map(|c| c.re * scale).collect()
}

/// Convolution of `signal` with a kernel sampled at offsets
/// `-half..=half`, trimmed back to the length of `signal`.
pub fn convolve_centered(signal: &[f64], kernel: &[f64]) -> Vec<f64> {
    debug_assert!(kernel.len() % 2 == 1);
    let half = kernel.len() / 2;
    let full = convolve(signal, kernel);
    full[half..half + signal.len()].to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct(a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; a.len() + b.len() - 1];
        for (i, x) in a.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                out[i + j] += x * y;
            }
        }
        out
    }

    #[test]
    fn matches_direct_sum() {
        let a: Vec<f64> = (0..37).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let b: Vec<f64> = (0..11).map(|i| (i as f64 * 0.3).sin()).collect();
        let fast = convolve(&a, &b);
        let slow = direct(&a, &b);
        assert_eq!(fast.len(), slow.len());
        for (x, y) in fast.iter().zip(&slow) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn centered_identity_kernel() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let out = convolve_centered(&a, &[0.0, 1.0, 0.0]);
        for (x, y) in out.iter().zip(&a) {
            assert!((x - y).abs() < 1e-14);
        }
    }
}
