//! Savitzky–Golay smoothing: each output sample is the value at the window
//! centre of the least-squares polynomial fitted to the surrounding samples.
//!
//! Signal edges are handled by mirror reflection about the first and last
//! sample (`x[-i] = x[i]`), so every output uses the same centre kernel.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;

pub const DEFAULT_WINDOW: usize = 9;
pub const DEFAULT_POLYORDER: usize = 2;

#[derive(Debug, Clone)]
pub struct SavitzkyGolay {
    window: usize,
    polyorder: usize,
    coeffs: Vec<f64>,
}

impl SavitzkyGolay {
    pub fn new(window: usize, polyorder: usize) -> Result<Self> {
        if window == 0 || window.is_multiple_of(2) {
            return Err(Error::invalid(alloc::format!("Savitzky-Golay window must be odd and positive, got {window}")));
        }
        if polyorder + 1 >= window {
            return Err(Error::invalid(alloc::format!(
                "polyorder {polyorder} must be at most window - 2 = {}",
                window as isize - 2
            )));
        }
        Ok(Self { window, polyorder, coeffs: centre_coefficients(window, polyorder) })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn polyorder(&self) -> usize {
        self.polyorder
    }

    /// Convolution kernel applied at every sample, indexed from `-half` to `+half`.
    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    /// Filters one channel. Inputs shorter than the window are returned as is.
    pub fn apply<T: Real>(&self, x: &[T]) -> Vec<T> {
        let n = x.len();
        if n < self.window {
            return x.to_vec();
        }
        let half = (self.window / 2) as isize;
        let last = n as isize - 1;
        let mirror = |i: isize| -> usize {
            if i < 0 {
                (-i) as usize
            } else if i > last {
                (2 * last - i) as usize
            } else {
                i as usize
            }
        };
        (0..n as isize)
            .map(|t| {
                let acc: f64 = self
                    .coeffs
                    .iter()
                    .enumerate()
                    .map(|(j, &c)| c * x[mirror(t + j as isize - half)].to_f64_lossy())
                    .sum();
                T::lit(acc)
            })
            .collect()
    }
}

/// Row of the least-squares projection that evaluates the fitted polynomial
/// at offset 0. Abscissae are scaled to [-1, 1] for conditioning.
fn centre_coefficients(window: usize, polyorder: usize) -> Vec<f64> {
    let half = (window / 2) as f64;
    let xs: Vec<f64> = (0..window).map(|j| if half == 0.0 { 0.0 } else { (j as f64 - half) / half }).collect();
    let p = polyorder + 1;

    // Gram matrix of the Vandermonde basis.
    let mut gram = vec![0.0f64; p * p];
    for r in 0..p {
        for c in 0..p {
            gram[r * p + c] = xs.iter().map(|x| powi(*x, r + c)).sum();
        }
    }
    let mut rhs = vec![0.0f64; p];
    rhs[0] = 1.0;
    let y = solve(&mut gram, &mut rhs, p);

    xs.iter().map(|&x| (0..p).map(|k| y[k] * powi(x, k)).sum()).collect()
}

fn powi(x: f64, e: usize) -> f64 {
    let mut acc = 1.0;
    for _ in 0..e {
        acc *= x;
    }
    acc
}

/// Gaussian elimination with partial pivoting on a small dense system.
fn solve(a: &mut [f64], b: &mut [f64], n: usize) -> Vec<f64> {
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| {
                a[i * n + col].abs().partial_cmp(&a[j * n + col].abs()).unwrap_or(core::cmp::Ordering::Equal)
            })
            .unwrap_or(col);
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        let d = a[col * n + col];
        for row in col + 1..n {
            let f = a[row * n + col] / d;
            if f != 0.0 {
                for k in col..n {
                    a[row * n + k] -= f * a[col * n + k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row * n + k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row * n + row];
    }
    x
}
