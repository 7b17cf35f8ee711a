//! Discrete Fourier transforms with the project-wide normalization
//! `X[m] = (1/M) Σ x[i] e^{-j2πmi/M}`.
//!
//! The direct transforms use exact integer phase indices and serve as the
//! reference; the FFT-backed ones must agree with them to 1e-12.

use std::cell::RefCell;
use std::f64::consts::TAU;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// `e^{j2π index/len}` with the index reduced modulo `len` first.
pub fn unit_phasor(index: i64, len: usize) -> Complex64 {
    let r = index.rem_euclid(len as i64) as f64;
    Complex64::from_polar(1.0, TAU * r / len as f64)
}

/// Table of `e^{j2π r/len}` for `r` in `0..len`.
pub fn phasor_table(len: usize) -> Vec<Complex64> {
    (0..len as i64).map(|r| unit_phasor(r, len)).collect()
}

/// Reference forward DFT, O(M²).
pub fn forward_direct(x: &[Complex64]) -> Vec<Complex64> {
    let len = x.len();
    let table = phasor_table(len);
    let scale = 1.0 / len as f64;
    (0..len)
        .map(|m| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (i, &xi) in x.iter().enumerate() {
                // e^{-j2πmi/M} = conj(table[mi mod M])
                acc += xi * table[(m * i) % len].conj();
            }
            acc * scale
        })
        .collect()
}

/// Reference inverse DFT without scaling: `x[i] = Σ X[m] e^{+j2πmi/M}`.
pub fn inverse_direct(spectrum: &[Complex64]) -> Vec<Complex64> {
    let len = spectrum.len();
    let table = phasor_table(len);
    (0..len)
        .map(|i| {
            spectrum
                .iter()
                .enumerate()
                .map(|(m, &xm)| xm * table[(m * i) % len])
                .sum()
        })
        .collect()
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan_forward(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(len))
}

fn plan_inverse(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(len))
}

/// Forward DFT via FFT, same normalization as [`forward_direct`].
pub fn forward(x: &[Complex64]) -> Vec<Complex64> {
    if x.is_empty() {
        return Vec::new();
    }
    let mut buf = x.to_vec();
    plan_forward(buf.len()).process(&mut buf);
    let scale = 1.0 / buf.len() as f64;
    buf.iter_mut().for_each(|v| *v *= scale);
    buf
}

/// Unscaled inverse DFT via FFT, same convention as [`inverse_direct`].
pub fn inverse(spectrum: &[Complex64]) -> Vec<Complex64> {
    if spectrum.is_empty() {
        return Vec::new();
    }
    let mut buf = spectrum.to_vec();
    plan_inverse(buf.len()).process(&mut buf);
    buf
}

/// Largest magnitude in a slice (0 for empty input).
pub fn peak_magnitude(x: &[Complex64]) -> f64 {
    x.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

/// Max elementwise deviation between two equal-length slices.
pub fn max_deviation(a: &[Complex64], b: &[Complex64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}
