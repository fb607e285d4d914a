//! Square 2D FFTs on row-major N×N buffers.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub struct Fft2 {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("n", &self.n).finish()
    }
}

impl Clone for Fft2 {
    fn clone(&self) -> Self {
        Self { n: self.n, forward: self.forward.clone(), inverse: self.inverse.clone() }
    }
}

impl Fft2 {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self { n, forward: planner.plan_fft_forward(n), inverse: planner.plan_fft_inverse(n) }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    /// Index of the mode (m1, m2) in an N×N buffer, wrapping negatives.
    pub fn index(&self, m: [i64; 2]) -> usize {
        let n = self.n as i64;
        (m[0].rem_euclid(n) * n + m[1].rem_euclid(n)) as usize
    }

    fn run(&self, buf: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        assert_eq!(buf.len(), n * n);
        for row in buf.chunks_exact_mut(n) {
            plan.process(row);
        }
        let mut col = vec![Complex64::new(0.0, 0.0); n];
        for j in 0..n {
            for i in 0..n {
                col[i] = buf[i * n + j];
            }
            plan.process(&mut col);
            for i in 0..n {
                buf[i * n + j] = col[i];
            }
        }
    }

    /// Σ_t f(t) e^{−2πi m·t} over t = (i, j)/N, unnormalized.
    pub fn forward(&self, buf: &mut [Complex64]) {
        self.run(buf, &self.forward)
    }

    /// Σ_m F_m e^{2πi m·t}, unnormalized.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.run(buf, &self.inverse)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn single_mode_round_trip() {
        let fft = Fft2::new(8);
        let mut buf = vec![Complex64::new(0.0, 0.0); 64];
        buf[fft.index([2, -1])] = Complex64::new(1.0, 0.0);
        fft.inverse(&mut buf);
        let t = (3.0 / 8.0, 5.0 / 8.0);
        let expect = Complex64::from_polar(1.0, 2.0 * PI * (2.0 * t.0 - t.1));
        assert!((buf[3 * 8 + 5] - expect).norm() < 1e-13);
        fft.forward(&mut buf);
        assert!((buf[fft.index([2, -1])] - Complex64::new(64.0, 0.0)).norm() < 1e-11);
    }
}
