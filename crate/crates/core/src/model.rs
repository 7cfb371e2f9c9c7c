//! Domain types shared by every stage of the pipeline.
//!
//! All rates and frequencies are expressed in units of the mechanical
//! frequency, so with the default `omega_m = 1` one time unit is `1/ωm`.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical parameters of the driven optomechanical system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub omega_m: f64,
    pub g0: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub delta_c: f64,
    pub n_bar_m: f64,
}

impl Default for SystemParams {
    /// The experimentally motivated set: g0 = 4e-5, κ = 0.2, γ = 2e-6,
    /// Δc = 1 and a 100-phonon bath.
    fn default() -> Self {
        SystemParams {
            omega_m: 1.0,
            g0: 4e-5,
            kappa: 0.2,
            gamma: 2e-6,
            delta_c: 1.0,
            n_bar_m: 100.0,
        }
    }
}

/// Check the parameter invariants, naming the first offending field.
pub fn validate_params(p: &SystemParams) -> Result<()> {
    let fields = [
        ("omega_m", p.omega_m),
        ("g0", p.g0),
        ("kappa", p.kappa),
        ("gamma", p.gamma),
        ("delta_c", p.delta_c),
        ("n_bar_m", p.n_bar_m),
    ];
    for (name, v) in fields {
        if !v.is_finite() {
            return Err(Error::invalid(name, "not finite"));
        }
    }
    if p.omega_m <= 0.0 {
        return Err(Error::invalid("omega_m", "must be > 0"));
    }
    if p.kappa <= 0.0 {
        return Err(Error::invalid("kappa", "must be > 0"));
    }
    if p.gamma < 0.0 {
        return Err(Error::invalid("gamma", "must be >= 0"));
    }
    if p.g0 < 0.0 {
        return Err(Error::invalid("g0", "must be >= 0"));
    }
    if p.n_bar_m < 0.0 {
        return Err(Error::invalid("n_bar_m", "must be >= 0"));
    }
    Ok(())
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        validate_params(self)
    }
}

/// Piecewise-constant drive: amplitude and phase per uniform time bin.
///
/// The amplitude may go negative (equivalent to a π phase shift) and the
/// phase is kept unwrapped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    pub t_final: f64,
    pub omega: Vec<f64>,
    pub phi: Vec<f64>,
}

impl Pulse {
    pub fn new(t_final: f64, omega: Vec<f64>, phi: Vec<f64>) -> Result<Self> {
        let p = Pulse { t_final, omega, phi };
        p.validate()?;
        Ok(p)
    }

    /// All-zero drive (no field in the cavity).
    pub fn zero(t_final: f64, n_bins: usize) -> Self {
        Pulse {
            t_final,
            omega: vec![0.0; n_bins],
            phi: vec![0.0; n_bins],
        }
    }

    /// Constant amplitude and phase over the whole window.
    pub fn constant(t_final: f64, n_bins: usize, omega: f64, phi: f64) -> Self {
        Pulse {
            t_final,
            omega: vec![omega; n_bins],
            phi: vec![phi; n_bins],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_final > 0.0) || !self.t_final.is_finite() {
            return Err(Error::invalid("t_final", "must be > 0"));
        }
        if self.omega.len() < 2 {
            return Err(Error::invalid("n_bins", "need at least 2 bins"));
        }
        if self.phi.len() != self.omega.len() {
            return Err(Error::invalid("phi", "length differs from omega"));
        }
        if self.omega.iter().chain(&self.phi).any(|v| !v.is_finite()) {
            return Err(Error::invalid("omega", "non-finite control value"));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.omega.len()
    }

    pub fn bin_width(&self) -> f64 {
        self.t_final / self.n_bins() as f64
    }

    /// Left edge of bin `k`.
    pub fn bin_start(&self, k: usize) -> f64 {
        k as f64 * self.bin_width()
    }

    /// Complex drive term `Ω e^{-iφ}` of bin `k`.
    pub fn drive(&self, k: usize) -> C64 {
        C64::from_polar(self.omega[k], -self.phi[k])
    }

    pub fn max_abs_omega(&self) -> f64 {
        self.omega.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_phi(&self) -> f64 {
        self.phi.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Nearest-neighbour resampling onto `n_bins` bins (bin centres).
    pub fn rebinned(&self, n_bins: usize) -> Pulse {
        let n_old = self.n_bins();
        let pick = |k: usize| -> usize {
            let centre = (k as f64 + 0.5) / n_bins as f64;
            ((centre * n_old as f64).floor() as usize).min(n_old - 1)
        };
        Pulse {
            t_final: self.t_final,
            omega: (0..n_bins).map(|k| self.omega[pick(k)]).collect(),
            phi: (0..n_bins).map(|k| self.phi[pick(k)]).collect(),
        }
    }
}

/// Classical displacement amplitudes of cavity (`alpha`) and mechanics (`beta`).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanFieldState {
    pub alpha: C64,
    pub beta: C64,
}

impl MeanFieldState {
    pub fn new(alpha: C64, beta: C64) -> Self {
        MeanFieldState { alpha, beta }
    }

    pub fn is_finite(&self) -> bool {
        self.alpha.is_finite() && self.beta.is_finite()
    }

    /// Effective detuning Δ(t) = Δc + g0 (β + β*).
    pub fn detuning(&self, p: &SystemParams) -> f64 {
        p.delta_c + 2.0 * p.g0 * self.beta.re
    }

    /// Linearized coupling G(t) = g0 α.
    pub fn coupling(&self, p: &SystemParams) -> C64 {
        self.alpha * p.g0
    }
}

/// Indices of the ten second-order moments.
pub mod idx {
    pub const AD_A: usize = 0;
    pub const BD_B: usize = 1;
    pub const AD_B: usize = 2;
    pub const A_BD: usize = 3;
    pub const AD_AD: usize = 4;
    pub const AD_BD: usize = 5;
    pub const BD_BD: usize = 6;
    pub const A_A: usize = 7;
    pub const A_B: usize = 8;
    pub const B_B: usize = 9;

    /// Column labels in storage order, used for CSV headers.
    pub const LABELS: [&str; 10] = ["ada", "bdb", "adb", "abd", "adad", "adbd", "bdbd", "aa", "ab", "bb"];

    /// Pairs (i, j) with x[j] = conj(x[i]).
    pub const CONJUGATE_PAIRS: [(usize, usize); 4] = [(AD_AD, A_A), (BD_BD, B_B), (AD_B, A_BD), (AD_BD, A_B)];
}

/// The ten second-order moments
/// (⟨a†a⟩, ⟨b†b⟩, ⟨a†b⟩, ⟨ab†⟩, ⟨a†a†⟩, ⟨a†b†⟩, ⟨b†b†⟩, ⟨aa⟩, ⟨ab⟩, ⟨bb⟩)
/// of the fluctuations in the displaced frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MomentVector {
    pub x: [C64; 10],
}

impl MomentVector {
    pub fn new(x: [C64; 10]) -> Self {
        MomentVector { x }
    }

    pub fn norm(&self) -> f64 {
        self.x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Conjugacy tolerance `1e-9 (1 + |x|)`.
    pub fn conjugacy_tolerance(&self) -> f64 {
        1e-9 * (1.0 + self.norm())
    }

    /// Largest violation of the conjugate-pair and real-occupation relations.
    pub fn conjugacy_residual(&self) -> f64 {
        let x = &self.x;
        let mut r: f64 = 0.0;
        for (i, j) in idx::CONJUGATE_PAIRS {
            r = r.max((x[j] - x[i].conj()).norm());
        }
        r.max(x[idx::AD_A].im.abs()).max(x[idx::BD_B].im.abs())
    }

    pub fn check_invariants(&self) -> Result<()> {
        let tol = self.conjugacy_tolerance();
        if self.x.iter().any(|z| !z.is_finite()) {
            return Err(Error::Domain("non-finite moment".into()));
        }
        let res = self.conjugacy_residual();
        if res > tol {
            return Err(Error::Domain(format!("conjugacy residual {res:e} exceeds {tol:e}")));
        }
        if self.x[idx::AD_A].re < -tol || self.x[idx::BD_B].re < -tol {
            return Err(Error::Domain("negative occupation".into()));
        }
        Ok(())
    }

    pub fn photons(&self) -> f64 {
        self.x[idx::AD_A].re
    }

    pub fn phonons(&self) -> f64 {
        self.x[idx::BD_B].re
    }
}

/// Moments of the mechanical thermal state at the bath occupation, cavity in
/// vacuum.
pub fn thermal_initial_moments(p: &SystemParams) -> MomentVector {
    thermal_moments(p.n_bar_m)
}

/// Moments with `⟨b†b⟩ = n_bar` and everything else zero.
pub fn thermal_moments(n_bar: f64) -> MomentVector {
    let mut x = [C64::new(0.0, 0.0); 10];
    x[idx::BD_B] = C64::new(n_bar, 0.0);
    MomentVector { x }
}

/// Symmetrized quadrature covariance over (Xa, Ya, Xb, Yb).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceMatrix {
    pub v: [[f64; 4]; 4],
}

impl CovarianceMatrix {
    /// The 2×2 mechanical block over (Xb, Yb).
    pub fn mechanical(&self) -> [[f64; 2]; 2] {
        [[self.v[2][2], self.v[2][3]], [self.v[3][2], self.v[3][3]]]
    }

    pub fn optical(&self) -> [[f64; 2]; 2] {
        [[self.v[0][0], self.v[0][1]], [self.v[1][0], self.v[1][1]]]
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..4).all(|i| (0..4).all(|j| (self.v[i][j] - self.v[j][i]).abs() <= tol))
    }
}
