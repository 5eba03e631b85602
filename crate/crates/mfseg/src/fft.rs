//! Square 2-D FFT on row-major `Complex<f64>` buffers, with planner reuse.
//!
//! Conventions: `forward` applies the `e^{-i 2π k·n / N}` kernel with no
//! normalization; `inverse` applies the conjugate kernel, also without
//! normalization, so `inverse(forward(x)) = N² x`.

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::collections::HashMap;
use std::sync::Arc;

pub struct Fft2 {
    planner: FftPlanner<f64>,
    fwd: HashMap<usize, Arc<dyn Fft<f64>>>,
    inv: HashMap<usize, Arc<dyn Fft<f64>>>,
    scratch: Vec<Complex<f64>>,
}

impl Default for Fft2 {
    fn default() -> Self {
        Self::new()
    }
}

impl Fft2 {
    pub fn new() -> Self {
        Self {
            planner: FftPlanner::new(),
            fwd: HashMap::new(),
            inv: HashMap::new(),
            scratch: Vec::new(),
        }
    }

    pub fn forward(&mut self, data: &mut [Complex<f64>], n: usize) {
        let fft = self
            .fwd
            .entry(n)
            .or_insert_with(|| self.planner.plan_fft_forward(n))
            .clone();
        self.run(fft, data, n);
    }

    pub fn inverse(&mut self, data: &mut [Complex<f64>], n: usize) {
        let fft = self
            .inv
            .entry(n)
            .or_insert_with(|| self.planner.plan_fft_inverse(n))
            .clone();
        self.run(fft, data, n);
    }

    fn run(&mut self, fft: Arc<dyn Fft<f64>>, data: &mut [Complex<f64>], n: usize) {
        assert_eq!(data.len(), n * n, "buffer is not n x n");
        let need = fft.get_inplace_scratch_len();
        if self.scratch.len() < need {
            self.scratch.resize(need, Complex::default());
        }
        for row in data.chunks_exact_mut(n) {
            fft.process_with_scratch(row, &mut self.scratch);
        }
        transpose_square(data, n);
        for row in data.chunks_exact_mut(n) {
            fft.process_with_scratch(row, &mut self.scratch);
        }
        transpose_square(data, n);
    }
}

fn transpose_square(data: &mut [Complex<f64>], n: usize) {
    for r in 0..n {
        for c in (r + 1)..n {
            data.swap(r * n + c, c * n + r);
        }
    }
}
