//! Thin FFT helpers over rustfft.
//!
//! Conventions: the forward transform uses e^{-2 pi i nk/N}, so a causal
//! delay of m samples corresponds to a spectral factor e^{-2 pi i mk/N}.
//! Inverse transforms are normalised by 1/N here.

use num_complex::Complex64;
use rustfft::FftPlanner;
use std::cell::RefCell;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

pub fn fft_inplace(buf: &mut [Complex64]) {
    PLANNER.with(|p| {
        let fft = p.borrow_mut().plan_fft_forward(buf.len());
        fft.process(buf);
    });
}

pub fn ifft_inplace(buf: &mut [Complex64]) {
    PLANNER.with(|p| {
        let fft = p.borrow_mut().plan_fft_inverse(buf.len());
        fft.process(buf);
    });
    let scale = 1.0 / buf.len() as f64;
    for v in buf.iter_mut() {
        *v *= scale;
    }
}

/// Reorder a natural-axis array (monotonic frequencies, centre at index n/2)
/// into FFT bin order (DC first, negative frequencies in the upper half).
pub fn natural_to_fft_order<T: Copy>(natural: &[T]) -> Vec<T> {
    let n = natural.len();
    (0..n).map(|j| natural[(j + n / 2) % n]).collect()
}

/// Inverse of [`natural_to_fft_order`].
pub fn fft_to_natural_order<T: Copy>(fft: &[T]) -> Vec<T> {
    let n = fft.len();
    (0..n).map(|k| fft[(k + n / 2) % n]).collect()
}
