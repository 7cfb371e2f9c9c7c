//! Covariance assembly, rotated-quadrature variance, squeezing degree and the
//! Gaussian Wigner function of the mechanical mode.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{det4, inverse2};
use crate::model::{idx, CovarianceMatrix, MomentVector};

/// Variance of a quadrature in the vacuum (ħ = 1).
pub const ZERO_POINT_VARIANCE: f64 = 0.5;

/// Covariance assembled from the moments without the physicality check.
pub fn covariance_unchecked(m: &MomentVector) -> CovarianceMatrix {
    let x = &m.x;
    let na = x[idx::AD_A].re;
    let nb = x[idx::BD_B].re;
    let aa = x[idx::A_A];
    let bb = x[idx::B_B];
    let adb = x[idx::AD_B];
    let ab = x[idx::A_B];

    let v11 = 0.5 + na + aa.re;
    let v22 = 0.5 + na - aa.re;
    let v12 = aa.im;
    let v33 = 0.5 + nb + bb.re;
    let v44 = 0.5 + nb - bb.re;
    let v34 = bb.im;
    let v13 = adb.re + ab.re;
    let v14 = adb.im + ab.im;
    let v23 = ab.im - adb.im;
    let v24 = adb.re - ab.re;
    CovarianceMatrix {
        v: [
            [v11, v12, v13, v14],
            [v12, v22, v23, v24],
            [v13, v23, v33, v34],
            [v14, v24, v34, v44],
        ],
    }
}

/// Quadrature covariance over (Xa, Ya, Xb, Yb), rejecting states that violate
/// the uncertainty principle.
pub fn covariance_from_moments(m: &MomentVector) -> Result<CovarianceMatrix> {
    let v = covariance_unchecked(m);
    let (nu_minus, _) = symplectic_eigenvalues(&v);
    if nu_minus < 0.5 - 1e-6 {
        return Err(Error::Nonphysical { nu: nu_minus });
    }
    Ok(v)
}

/// Symplectic eigenvalues (ν₋, ν₊) of a two-mode covariance matrix.
pub fn symplectic_eigenvalues(cov: &CovarianceMatrix) -> (f64, f64) {
    let v = &cov.v;
    let det_a = v[0][0] * v[1][1] - v[0][1] * v[1][0];
    let det_b = v[2][2] * v[3][3] - v[2][3] * v[3][2];
    let det_c = v[0][2] * v[1][3] - v[0][3] * v[1][2];
    let det_v = det4(v);
    let sigma = det_a + det_b + 2.0 * det_c;
    let disc = (sigma * sigma - 4.0 * det_v).max(0.0).sqrt();
    let minus = (0.5 * (sigma - disc)).max(0.0).sqrt();
    let plus = (0.5 * (sigma + disc)).max(0.0).sqrt();
    (minus, plus)
}

/// ΔX_b²(θ) = V33 cos²θ + V44 sin²θ + ½(V34 + V43) sin 2θ.
pub fn quadrature_variance(cov: &CovarianceMatrix, theta: f64) -> f64 {
    let v = &cov.v;
    let (s, c) = theta.sin_cos();
    v[2][2] * c * c + v[3][3] * s * s + 0.5 * (v[2][3] + v[3][2]) * (2.0 * theta).sin()
}

/// Squeezing degree in dB relative to the zero-point variance.
pub fn squeezing_degree(variance: f64) -> Result<f64> {
    if !(variance > 0.0) {
        return Err(Error::Domain(format!("variance {variance} must be positive")));
    }
    Ok(-10.0 * (variance / ZERO_POINT_VARIANCE).log10())
}

/// Variance target that corresponds to a squeezing degree `db`.
pub fn variance_for_degree(db: f64) -> f64 {
    ZERO_POINT_VARIANCE * 10f64.powf(-db / 10.0)
}

/// Variance written directly in the mechanical moments,
/// ½ + ⟨b†b⟩ + Re⟨b†b†⟩ cos 2θ − Im⟨b†b†⟩ sin 2θ, with the squeezing flag
/// (true when the part beyond ½ is negative).
pub fn mechanism_variance(m: &MomentVector, theta: f64) -> (f64, bool) {
    let nb = m.x[idx::BD_B].re;
    let bdbd = m.x[idx::BD_BD];
    let excess = nb + bdbd.re * (2.0 * theta).cos() - bdbd.im * (2.0 * theta).sin();
    (0.5 + excess, excess < 0.0)
}

/// Smallest variance over all angles and the angle that attains it.
pub fn principal_variance(cov: &CovarianceMatrix) -> (f64, f64) {
    let v = &cov.v;
    let mean = 0.5 * (v[2][2] + v[3][3]);
    let half_diff = 0.5 * (v[2][2] - v[3][3]);
    let off = 0.5 * (v[2][3] + v[3][2]);
    let r = half_diff.hypot(off);
    // ΔX²(θ) = mean + half_diff cos2θ + off sin2θ, minimal where the
    // oscillating part points opposite to (half_diff, off).
    let theta = 0.5 * (-off).atan2(-half_diff);
    (mean - r, theta.rem_euclid(std::f64::consts::PI))
}

/// Largest variance over all angles.
pub fn antisqueezed_variance(cov: &CovarianceMatrix) -> f64 {
    let v = &cov.v;
    let mean = 0.5 * (v[2][2] + v[3][3]);
    mean + (0.5 * (v[2][2] - v[3][3])).hypot(0.5 * (v[2][3] + v[3][2]))
}

/// Squeezing diagnostics at one time point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SqueezingReport {
    pub theta: f64,
    pub variance: f64,
    pub degree_db: f64,
    pub mean_phonon: f64,
    pub moment_bdbd: num_complex::Complex64,
}

impl SqueezingReport {
    pub fn from_moments(m: &MomentVector, theta: f64) -> Result<Self> {
        let cov = covariance_unchecked(m);
        let variance = quadrature_variance(&cov, theta);
        Ok(SqueezingReport {
            theta,
            variance,
            degree_db: squeezing_degree(variance)?,
            mean_phonon: m.phonons(),
            moment_bdbd: m.x[idx::BD_BD],
        })
    }
}

/// Evaluation grid for the Wigner function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WignerGrid {
    pub n_re: usize,
    pub n_im: usize,
    /// Half-width of the square window around the origin.
    pub extent: f64,
}

impl WignerGrid {
    /// 201×201 points over ±5 standard deviations of the wider quadrature.
    pub fn covering(v_mech: &[[f64; 2]; 2]) -> Self {
        WignerGrid {
            n_re: 201,
            n_im: 201,
            extent: 5.0 * v_mech[0][0].max(v_mech[1][1]).sqrt(),
        }
    }

    fn axis(n: usize, extent: f64) -> Vec<f64> {
        if n == 1 {
            return vec![0.0];
        }
        (0..n)
            .map(|k| -extent + 2.0 * extent * k as f64 / (n - 1) as f64)
            .collect()
    }
}

/// Wigner function sampled on a rectangular grid; `values[i][j]` is at
/// `(grid_re[i], grid_im[j])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WignerField {
    pub grid_re: Vec<f64>,
    pub grid_im: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl WignerField {
    pub fn cell_area(&self) -> f64 {
        let d = |a: &[f64]| if a.len() > 1 { a[1] - a[0] } else { 1.0 };
        d(&self.grid_re) * d(&self.grid_im)
    }

    /// Riemann-sum normalization.
    pub fn total(&self) -> f64 {
        self.values.iter().flatten().sum::<f64>() * self.cell_area()
    }

    /// Marginal over `D_I`, one value per `D_R` grid point.
    pub fn marginal_re(&self) -> Vec<f64> {
        let d_im = if self.grid_im.len() > 1 {
            self.grid_im[1] - self.grid_im[0]
        } else {
            1.0
        };
        self.values.iter().map(|row| row.iter().sum::<f64>() * d_im).collect()
    }
}

/// Gaussian Wigner density with covariance `v_mech`, evaluated at one point.
pub fn wigner_point(v_mech: &[[f64; 2]; 2], d: [f64; 2]) -> Result<f64> {
    let (inv, det) = inverse2(v_mech);
    if !(det > 1e-14) {
        return Err(Error::SingularCovariance { det });
    }
    Ok(gaussian(&inv, det, d))
}

fn gaussian(inv: &[[f64; 2]; 2], det: f64, d: [f64; 2]) -> f64 {
    let q = d[0] * (inv[0][0] * d[0] + inv[0][1] * d[1]) + d[1] * (inv[1][0] * d[0] + inv[1][1] * d[1]);
    (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * det.sqrt())
}

/// W(D) = exp(−½ Dᵀ V_b⁻¹ D) / (2π √det V_b) on `grid`.
pub fn wigner(v_mech: &[[f64; 2]; 2], grid: &WignerGrid) -> Result<WignerField> {
    let (inv, det) = inverse2(v_mech);
    if !(det > 1e-14) {
        return Err(Error::SingularCovariance { det });
    }
    let grid_re = WignerGrid::axis(grid.n_re, grid.extent);
    let grid_im = WignerGrid::axis(grid.n_im, grid.extent);
    let values = grid_re
        .iter()
        .map(|&re| grid_im.iter().map(|&im| gaussian(&inv, det, [re, im])).collect())
        .collect();
    Ok(WignerField {
        grid_re,
        grid_im,
        values,
    })
}
