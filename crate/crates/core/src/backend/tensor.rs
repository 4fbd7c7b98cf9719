//! Minimal row-major f64 matrix used for weights, activations, and traces.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Mat {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Gaussian init via Box-Muller over the supplied RNG stream.
    pub fn randn(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Mat {
        let mut data = Vec::with_capacity(rows * cols);
        while data.len() < rows * cols {
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let r = (-2.0 * u1.ln()).sqrt();
            let theta = 2.0 * std::f64::consts::PI * u2;
            data.push(std * r * theta.cos());
            if data.len() < rows * cols {
                data.push(std * r * theta.sin());
            }
        }
        Mat { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// `y = W x` where `self` is `[out, in]` and `x` has length `in`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// `dx += W^T dy` where `dy` has length `rows`.
    pub fn matvec_t_add(&self, dy: &[f64], dx: &mut [f64]) {
        debug_assert_eq!(dy.len(), self.rows);
        debug_assert_eq!(dx.len(), self.cols);
        for (r, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (d, w) in dx.iter_mut().zip(self.row(r)) {
                *d += g * w;
            }
        }
    }

    /// Accumulates the outer product `self += dy x^T`.
    pub fn add_outer(&mut self, dy: &[f64], x: &[f64]) {
        debug_assert_eq!(dy.len(), self.rows);
        debug_assert_eq!(x.len(), self.cols);
        for (r, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (w, &xv) in self.row_mut(r).iter_mut().zip(x) {
                *w += g * xv;
            }
        }
    }

    pub fn add_assign(&mut self, other: &Mat) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// In-place numerically stable softmax over the first `n` entries; entries
/// past `n` are set to zero.
pub fn softmax_prefix(row: &mut [f64], n: usize) {
    let max = row[..n].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row[..n].iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row[..n].iter_mut() {
        *v /= sum;
    }
    for v in row[n..].iter_mut() {
        *v = 0.0;
    }
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let mut out = xs.to_vec();
    let n = out.len();
    softmax_prefix(&mut out, n);
    out
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn matvec_and_transpose_agree() {
        let w = Mat {
            rows: 2,
            cols: 3,
            data: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        };
        let y = w.matvec(&[1.0, 0.0, -1.0]);
        assert_eq!(y, vec![-2.0, -2.0]);
        let mut dx = vec![0.0; 3];
        w.matvec_t_add(&[1.0, 1.0], &mut dx);
        assert_eq!(dx, vec![5.0, 7.0, 9.0]);
    }

    #[test]
    fn softmax_rows_normalize() {
        let p = softmax(&[0.5, -1.0, 2.0]);
        let sum: f64 = p.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn randn_is_deterministic_per_seed() {
        let mut a = rand_chacha::ChaCha20Rng::seed_from_u64(5);
        let mut b = rand_chacha::ChaCha20Rng::seed_from_u64(5);
        assert_eq!(
            Mat::randn(3, 3, 0.02, &mut a),
            Mat::randn(3, 3, 0.02, &mut b)
        );
    }
}
