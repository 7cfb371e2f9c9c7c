//! Minimal dense complex matrices for the 4×4 and 10×10 propagators.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Row-major square complex matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CMat {
    pub dim: usize,
    pub data: Vec<C64>,
}

impl CMat {
    pub fn zeros(dim: usize) -> Self {
        CMat {
            dim,
            data: vec![ZERO; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = ONE;
        }
        m
    }

    pub fn from_rows<const N: usize>(rows: &[[C64; N]; N]) -> Self {
        CMat {
            dim: N,
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: C64) {
        self.data[i * self.dim + j] = v;
    }

    pub fn matmul(&self, rhs: &CMat) -> CMat {
        assert_eq!(self.dim, rhs.dim);
        let n = self.dim;
        let mut out = CMat::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == ZERO {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * rhs.data[k * n + j];
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[C64]) -> Vec<C64> {
        let n = self.dim;
        (0..n)
            .map(|i| (0..n).map(|j| self.data[i * n + j] * v[j]).sum())
            .collect()
    }

    /// Row vector times matrix, `vᵀ A`.
    pub fn vecmat(&self, v: &[C64]) -> Vec<C64> {
        let n = self.dim;
        let mut out = vec![ZERO; n];
        for i in 0..n {
            let vi = v[i];
            for j in 0..n {
                out[j] += vi * self.data[i * n + j];
            }
        }
        out
    }

    pub fn axpy(&mut self, a: C64, x: &CMat) {
        for (y, xv) in self.data.iter_mut().zip(&x.data) {
            *y += a * xv;
        }
    }

    pub fn scaled(&self, a: C64) -> CMat {
        CMat {
            dim: self.dim,
            data: self.data.iter().map(|v| v * a).collect(),
        }
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &CMat) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).norm()))
    }
}

/// Inverse of a 2×2 real matrix together with its determinant.
pub fn inverse2(m: &[[f64; 2]; 2]) -> ([[f64; 2]; 2], f64) {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let inv = [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]];
    (inv, det)
}

/// Determinant of a 4×4 real matrix by cofactor expansion over 2×2 minors.
pub fn det4(m: &[[f64; 4]; 4]) -> f64 {
    let s0 = m[0][0] * m[1][1] - m[1][0] * m[0][1];
    let s1 = m[0][0] * m[1][2] - m[1][0] * m[0][2];
    let s2 = m[0][0] * m[1][3] - m[1][0] * m[0][3];
    let s3 = m[0][1] * m[1][2] - m[1][1] * m[0][2];
    let s4 = m[0][1] * m[1][3] - m[1][1] * m[0][3];
    let s5 = m[0][2] * m[1][3] - m[1][2] * m[0][3];
    let c5 = m[2][2] * m[3][3] - m[3][2] * m[2][3];
    let c4 = m[2][1] * m[3][3] - m[3][1] * m[2][3];
    let c3 = m[2][1] * m[3][2] - m[3][1] * m[2][2];
    let c2 = m[2][0] * m[3][3] - m[3][0] * m[2][3];
    let c1 = m[2][0] * m[3][2] - m[3][0] * m[2][2];
    let c0 = m[2][0] * m[3][1] - m[3][0] * m[2][1];
    s0 * c5 - s1 * c4 + s2 * c3 + s3 * c2 - s4 * c1 + s5 * c0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn det4_matches_product_of_diagonal() {
        let m = [
            [2.0, 0.0, 0.0, 0.0],
            [0.0, 3.0, 0.0, 0.0],
            [0.0, 0.0, 5.0, 0.0],
            [0.0, 0.0, 0.0, 7.0],
        ];
        assert_eq!(det4(&m), 210.0);
        let p = [
            [0.0, 1.0, 0.0, 0.0],
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ];
        assert_eq!(det4(&p), -1.0);
    }

    #[test]
    fn identity_is_neutral() {
        let mut a = CMat::zeros(3);
        for i in 0..3 {
            for j in 0..3 {
                a.set(i, j, C64::new(i as f64 + 1.0, j as f64 - 1.0));
            }
        }
        let id = CMat::identity(3);
        assert_eq!(a.matmul(&id), a);
        assert_eq!(id.matmul(&a), a);
        let v = vec![C64::new(1.0, 2.0), C64::new(0.0, 1.0), C64::new(-1.0, 0.0)];
        assert_eq!(id.matvec(&v), v);
        assert_eq!(id.vecmat(&v), v);
    }
}
