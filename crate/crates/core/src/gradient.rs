//! Gradients of the final-time quadrature variance with respect to the
//! per-bin drive amplitude and phase.
//!
//! The loss is a real linear functional of the final moments, `L = Re(cᵀX(T)) + c₀`.
//! A drive perturbation acts on the mean fields through a kick vector, the
//! mean-field perturbation propagates with the linearized mean-field
//! dynamics `Λ`, and it feeds the moments through the sensitivity matrix
//! `B = ∂(MX + N)/∂(α, β, α*, β*)`, which in turn propagate with `Φ(T, τ)`.
//!
//! Three modes are provided:
//!
//! * [`GradientMode::FullChain`] keeps the whole chain
//!   `∫_s^T Φ(T,τ) B(τ) Λ(τ) dτ · Λ⁻¹(s) · k(s)`. Only the row `cᵀ` of this
//!   object is needed, so it is accumulated backward in time as a 10-vector
//!   `λ(τ) = Φ(T,τ)ᵀc` and a 4-vector `μ(s) = (cᵀR(s)Λ⁻¹(s))ᵀ`, integrated
//!   with the same RK4 grid as the forward problem.
//! * [`GradientMode::PaperPointwise`] drops the propagation of the mean-field
//!   perturbation (`δQ(τ)/δQ(s) = δ(τ − s)`), keeping only the instantaneous
//!   response `Φ(T,s) B(s) k½(s)`.
//! * [`GradientMode::FiniteDifference`] differentiates the end-to-end loss.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    integrate_meanfield, integrate_moments, meanfield_jacobian, propagator_meanfield_strided, propagator_moments,
    propagator_moments_strided, MeanFieldTrajectory, MomentCoeffs, MomentTrajectory,
};
use crate::error::{Error, Result};
use crate::model::{idx, thermal_initial_moments, MeanFieldState, MomentVector, Pulse, SystemParams};

const I: C64 = C64 { re: 0.0, im: 1.0 };
const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Real linear functional `Re(Σ wᵢ xᵢ) + offset` of a moment vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossFunctional {
    pub weights: [C64; 10],
    pub offset: f64,
}

impl LossFunctional {
    /// ΔX_b²(θ) = ½ + ⟨b†b⟩ + Re(⟨bb⟩ e^{−2iθ}), written with conjugate-symmetric
    /// weights so that the complex sum is already real.
    pub fn quadrature_variance(theta: f64) -> Self {
        let mut w = [ZERO; 10];
        w[idx::BD_B] = C64::from(1.0);
        w[idx::B_B] = 0.5 * C64::from_polar(1.0, -2.0 * theta);
        w[idx::BD_BD] = 0.5 * C64::from_polar(1.0, 2.0 * theta);
        LossFunctional {
            weights: w,
            offset: 0.5,
        }
    }

    /// V33 = ½ + ⟨b†b⟩ + Re⟨bb⟩.
    pub fn v33() -> Self {
        Self::quadrature_variance(0.0)
    }

    /// V44 = ½ + ⟨b†b⟩ − Re⟨bb⟩.
    pub fn v44() -> Self {
        Self::quadrature_variance(std::f64::consts::FRAC_PI_2)
    }

    /// V34 = Im⟨bb⟩.
    pub fn v34() -> Self {
        let mut w = [ZERO; 10];
        w[idx::B_B] = C64::new(0.0, -0.5);
        w[idx::BD_BD] = C64::new(0.0, 0.5);
        LossFunctional {
            weights: w,
            offset: 0.0,
        }
    }

    /// `a·self + b·other`.
    pub fn combine(&self, a: f64, other: &LossFunctional, b: f64) -> Self {
        LossFunctional {
            weights: std::array::from_fn(|i| self.weights[i] * a + other.weights[i] * b),
            offset: a * self.offset + b * other.offset,
        }
    }

    pub fn value(&self, x: &MomentVector) -> f64 {
        let s: C64 = self.weights.iter().zip(&x.x).map(|(w, v)| w * v).sum();
        s.re + self.offset
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientMode {
    PaperPointwise,
    FullChain,
    FiniteDifference,
}

impl GradientMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            GradientMode::PaperPointwise => "paper-pointwise",
            GradientMode::FullChain => "full-chain",
            GradientMode::FiniteDifference => "finite-difference",
        }
    }
}

impl std::str::FromStr for GradientMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" | "paper-pointwise" => Ok(GradientMode::PaperPointwise),
            "full" | "full-chain" => Ok(GradientMode::FullChain),
            "fd" | "finite-difference" => Ok(GradientMode::FiniteDifference),
            other => Err(Error::invalid("grad_mode", format!("unknown mode {other:?}"))),
        }
    }
}

/// Per-bin partial derivatives of the loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlGradient {
    pub d_omega: Vec<f64>,
    pub d_phi: Vec<f64>,
    pub mode: GradientMode,
}

impl ControlGradient {
    pub fn zeros(n_bins: usize, mode: GradientMode) -> Self {
        ControlGradient {
            d_omega: vec![0.0; n_bins],
            d_phi: vec![0.0; n_bins],
            mode,
        }
    }

    /// Both controls flattened as `[d_omega.., d_phi..]`.
    pub fn flat(&self) -> Vec<f64> {
        self.d_omega.iter().chain(&self.d_phi).copied().collect()
    }

    pub fn is_finite(&self) -> bool {
        self.flat().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Control {
    Amplitude,
    Phase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KickWeight {
    /// Half weight of a delta at the endpoint of the integration interval.
    Half,
    Full,
}

/// Instantaneous response of (α, β, α*, β*) to a unit control impulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KickVector {
    pub k: [C64; 4],
}

impl KickVector {
    pub fn dot(&self, v: &[C64; 4]) -> C64 {
        self.k.iter().zip(v).map(|(a, b)| a * b).sum()
    }
}

pub fn control_kick(omega: f64, phi: f64, which: Control, weight: KickWeight) -> KickVector {
    let scale = match weight {
        KickWeight::Half => 0.5,
        KickWeight::Full => 1.0,
    };
    let e_minus = C64::from_polar(1.0, -phi);
    let e_plus = e_minus.conj();
    let k = match which {
        Control::Amplitude => [I * e_minus, ZERO, -I * e_plus, ZERO],
        Control::Phase => [omega * e_minus, ZERO, omega * e_plus, ZERO],
    };
    KickVector {
        k: k.map(|z| z * scale),
    }
}

/// `∂(M X + N)/∂(α, β, α*, β*)`, one row per moment.
pub fn sensitivity_matrix(_mf: &MeanFieldState, x: &MomentVector, p: &SystemParams) -> [[C64; 4]; 10] {
    let x = &x.x;
    let one = C64::from(1.0);
    // Derivatives with respect to G = g0 α, G* and Δ.
    let d_g = [
        -I * (x[2] + x[5]),
        I * (x[2] - x[5]),
        -I * x[4],
        -I * (x[1] + x[6] - x[0]),
        ZERO,
        I * x[4],
        2.0 * I * x[5],
        -2.0 * I * (x[3] + x[8]),
        -I * (x[1] + one + x[9] + x[0]),
        -2.0 * I * x[2],
    ];
    let d_gc = [
        I * (x[8] + x[3]),
        I * (x[8] - x[3]),
        I * (x[9] + x[1] - x[0]),
        I * x[7],
        2.0 * I * (x[2] + x[5]),
        I * (x[1] + one + x[6] + x[0]),
        2.0 * I * x[3],
        ZERO,
        -I * x[7],
        -2.0 * I * x[8],
    ];
    let d_delta = [
        ZERO,
        ZERO,
        I * x[2],
        -I * x[3],
        2.0 * I * x[4],
        I * x[5],
        ZERO,
        -2.0 * I * x[7],
        -I * x[8],
        ZERO,
    ];
    // B depends on the mean fields only through G, G* and Δ, which are
    // linear in them; hence only the moments appear here.
    let g0 = p.g0;
    std::array::from_fn(|r| [g0 * d_g[r], g0 * d_delta[r], g0 * d_gc[r], g0 * d_delta[r]])
}

/// Numerical settings shared by the gradient modes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientSettings {
    /// Integration step (units 1/ωm).
    pub dt: f64,
    /// Relative finite-difference step.
    pub h_rel: f64,
}

impl Default for GradientSettings {
    fn default() -> Self {
        GradientSettings {
            dt: crate::dynamics::DEFAULT_DT,
            h_rel: 1e-4,
        }
    }
}

/// Forward run from the standard initial state.
pub fn forward(pulse: &Pulse, p: &SystemParams, dt: f64) -> Result<(MeanFieldTrajectory, MomentTrajectory)> {
    crate::dynamics::simulate(pulse, p, dt)
}

/// End-to-end loss of a pulse.
pub fn evaluate_loss(pulse: &Pulse, p: &SystemParams, loss: &LossFunctional, dt: f64) -> Result<f64> {
    let (_, mom) = forward(pulse, p, dt)?;
    Ok(loss.value(&mom.final_moments()))
}

/// Loss and its gradient in the requested mode.
pub fn loss_and_gradient(
    pulse: &Pulse,
    p: &SystemParams,
    loss: &LossFunctional,
    mode: GradientMode,
    settings: &GradientSettings,
) -> Result<(f64, ControlGradient)> {
    match mode {
        GradientMode::FiniteDifference => {
            let value = evaluate_loss(pulse, p, loss, settings.dt)?;
            let grad = finite_difference_gradient(pulse, p, loss, settings.h_rel, settings.dt)?;
            Ok((value, grad))
        }
        GradientMode::FullChain => {
            let (mf, mom) = forward(pulse, p, settings.dt)?;
            let grad = full_chain(&mf, &mom, loss)?;
            Ok((loss.value(&mom.final_moments()), grad))
        }
        GradientMode::PaperPointwise => {
            let (mf, mom) = forward(pulse, p, settings.dt)?;
            let grad = paper_pointwise(&mf, &mom, loss)?;
            Ok((loss.value(&mom.final_moments()), grad))
        }
    }
}

pub fn loss_gradient(
    pulse: &Pulse,
    p: &SystemParams,
    loss: &LossFunctional,
    mode: GradientMode,
    settings: &GradientSettings,
) -> Result<ControlGradient> {
    loss_and_gradient(pulse, p, loss, mode, settings).map(|(_, g)| g)
}

fn realize(z: C64, bin: usize) -> Result<f64> {
    let residue = z.im.abs();
    if !(residue <= 1e-9 * (1.0 + z.re.abs())) {
        return Err(Error::ComplexGradient { bin, residue });
    }
    Ok(z.re)
}

/// Per-point data needed by the backward sweep.
struct Linearization {
    m: [[C64; 10]; 10],
    b: [[C64; 4]; 10],
    w: [[C64; 4]; 4],
}

impl Linearization {
    fn new(mf: &MeanFieldState, x: &MomentVector, p: &SystemParams) -> Self {
        Linearization {
            m: MomentCoeffs::new(mf, p).matrix(),
            b: sensitivity_matrix(mf, x, p),
            w: meanfield_jacobian(mf, p),
        }
    }

    /// Backward-time derivative of (λ, μ, ∫μ).
    #[inline]
    fn adjoint_rhs(&self, lam: &[C64; 10], mu: &[C64; 4]) -> ([C64; 10], [C64; 4], [C64; 4]) {
        let mut dlam = [ZERO; 10];
        let mut dmu = [ZERO; 4];
        for (r, row) in self.m.iter().enumerate() {
            let l = lam[r];
            if l == ZERO {
                continue;
            }
            for (d, m) in dlam.iter_mut().zip(row) {
                *d -= l * m;
            }
        }
        for (r, row) in self.b.iter().enumerate() {
            let l = lam[r];
            for (d, b) in dmu.iter_mut().zip(row) {
                *d -= l * b;
            }
        }
        for (r, row) in self.w.iter().enumerate() {
            let u = mu[r];
            for (d, w) in dmu.iter_mut().zip(row) {
                *d -= u * w;
            }
        }
        (dlam, dmu, mu.map(|v| -v))
    }
}

fn hermite_mid(y0: &[C64; 10], f0: &[C64; 10], y1: &[C64; 10], f1: &[C64; 10], h: f64) -> [C64; 10] {
    std::array::from_fn(|i| 0.5 * (y0[i] + y1[i]) + (f0[i] - f1[i]) * (h / 8.0))
}

/// Full-chain gradient by a backward adjoint sweep over the integration grid.
pub fn full_chain(mf: &MeanFieldTrajectory, mom: &MomentTrajectory, loss: &LossFunctional) -> Result<ControlGradient> {
    let p = &mf.params;
    let grid = mf.grid;
    let n = grid.n_steps();
    let h = grid.dt();
    let spb = grid.steps_per_bin;
    let mut grad = ControlGradient::zeros(grid.n_bins, GradientMode::FullChain);

    let mut lam = loss.weights;
    let mut mu = [ZERO; 4];
    let mut acc = [ZERO; 4];

    let coeff_at = |j: usize| MomentCoeffs::new(&mf.states[j], p);
    let mut c1 = coeff_at(n);
    let mut lin1 = Linearization::new(&mf.states[n], &mom.moments[n], p);
    for j in (0..n).rev() {
        let c0 = coeff_at(j);
        let x0 = &mom.moments[j].x;
        let x1 = &mom.moments[j + 1].x;
        let xm = hermite_mid(x0, &c0.rhs(x0), x1, &c1.rhs(x1), h);
        let linm = Linearization::new(&mf.midpoints[j], &MomentVector::new(xm), p);
        let lin0 = Linearization::new(&mf.states[j], &mom.moments[j], p);

        let stage = |lin: &Linearization, lam: &[C64; 10], mu: &[C64; 4]| lin.adjoint_rhs(lam, mu);
        let shift10 = |y: &[C64; 10], k: &[C64; 10], a: f64| -> [C64; 10] { std::array::from_fn(|i| y[i] + k[i] * a) };
        let shift4 = |y: &[C64; 4], k: &[C64; 4], a: f64| -> [C64; 4] { std::array::from_fn(|i| y[i] + k[i] * a) };

        // Backward step of length h: y(t_j) = y(t_{j+1}) − h·(weighted slope).
        let (l1, m1, a1) = stage(&lin1, &lam, &mu);
        let (l2, m2, a2) = stage(&linm, &shift10(&lam, &l1, -0.5 * h), &shift4(&mu, &m1, -0.5 * h));
        let (l3, m3, a3) = stage(&linm, &shift10(&lam, &l2, -0.5 * h), &shift4(&mu, &m2, -0.5 * h));
        let (l4, m4, a4) = stage(&lin0, &shift10(&lam, &l3, -h), &shift4(&mu, &m3, -h));
        for i in 0..10 {
            lam[i] -= (l1[i] + 2.0 * l2[i] + 2.0 * l3[i] + l4[i]) * (h / 6.0);
        }
        for i in 0..4 {
            mu[i] -= (m1[i] + 2.0 * m2[i] + 2.0 * m3[i] + m4[i]) * (h / 6.0);
            acc[i] -= (a1[i] + 2.0 * a2[i] + 2.0 * a3[i] + a4[i]) * (h / 6.0);
        }

        if j % spb == 0 {
            let bin = j / spb;
            let (om, ph) = (mf.drive.omega[bin], mf.drive.phi[bin]);
            let ka = control_kick(om, ph, Control::Amplitude, KickWeight::Full);
            let kp = control_kick(om, ph, Control::Phase, KickWeight::Full);
            grad.d_omega[bin] = realize(ka.dot(&acc), bin)?;
            grad.d_phi[bin] = realize(kp.dot(&acc), bin)?;
            acc = [ZERO; 4];
        }
        c1 = c0;
        lin1 = lin0;
    }
    Ok(grad)
}

/// Contracted instantaneous response `cᵀ Φ(T,s) B(s)` at one grid point.
fn pointwise_density(row: &[C64], b: &[[C64; 4]; 10]) -> [C64; 4] {
    let mut out = [ZERO; 4];
    for (r, brow) in b.iter().enumerate() {
        for (o, v) in out.iter_mut().zip(brow) {
            *o += row[r] * v;
        }
    }
    out
}

/// Gradient that keeps only the instantaneous response at the perturbed time,
/// with half-weight kicks, evaluated from `Φ(T, t_k)` at the bin boundaries
/// and trapezoid-averaged over each bin.
pub fn paper_pointwise(
    mf: &MeanFieldTrajectory,
    mom: &MomentTrajectory,
    loss: &LossFunctional,
) -> Result<ControlGradient> {
    let p = &mf.params;
    let grid = mf.grid;
    let spb = grid.steps_per_bin;
    let width = mf.drive.bin_width();
    let phi = propagator_moments(mf)?;
    let densities: Vec<[C64; 4]> = phi
        .mats
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let j = k * spb;
            let row = m.vecmat(&loss.weights);
            pointwise_density(&row, &sensitivity_matrix(&mf.states[j], &mom.moments[j], p))
        })
        .collect();
    let mut grad = ControlGradient::zeros(grid.n_bins, GradientMode::PaperPointwise);
    for bin in 0..grid.n_bins {
        let (om, ph) = (mf.drive.omega[bin], mf.drive.phi[bin]);
        let ka = control_kick(om, ph, Control::Amplitude, KickWeight::Half);
        let kp = control_kick(om, ph, Control::Phase, KickWeight::Half);
        let avg: [C64; 4] = std::array::from_fn(|i| 0.5 * (densities[bin][i] + densities[bin + 1][i]));
        grad.d_omega[bin] = realize(ka.dot(&avg) * width, bin)?;
        grad.d_phi[bin] = realize(kp.dot(&avg) * width, bin)?;
    }
    Ok(grad)
}

/// Full-chain gradient built from materialized propagators: `Φ(T,τ)`, `Λ(τ)`
/// and `Λ⁻¹(s)` on every grid point, `R(s) = ∫_s^T Φ(T,τ)B(τ)Λ(τ)dτ`
/// accumulated backward with the trapezoid rule, and the bin integral of
/// `cᵀR(s)Λ⁻¹(s)` taken with the trapezoid rule as well.
///
/// Second order in the step and O(n_steps) 10×10 matrix products; a reference
/// for [`full_chain`] on short windows.
pub fn full_chain_explicit(
    mf: &MeanFieldTrajectory,
    mom: &MomentTrajectory,
    loss: &LossFunctional,
) -> Result<ControlGradient> {
    let p = &mf.params;
    let grid = mf.grid;
    let n = grid.n_steps();
    let h = grid.dt();
    let spb = grid.steps_per_bin;
    let phi = propagator_moments_strided(mf, 1)?;
    let lam = propagator_meanfield_strided(mf, 1)?;
    let lam_inv = lam.inverses.as_ref().expect("mean-field propagator carries inverses");

    // Integrand rows cᵀ Φ(T,τ) B(τ) Λ(τ), one 4-vector per grid point.
    let integrand: Vec<[C64; 4]> = (0..=n)
        .map(|j| {
            let row = phi.mats[j].vecmat(&loss.weights);
            let cb = pointwise_density(&row, &sensitivity_matrix(&mf.states[j], &mom.moments[j], p));
            let out = lam.mats[j].vecmat(&cb);
            [out[0], out[1], out[2], out[3]]
        })
        .collect();
    let mut r = vec![[ZERO; 4]; n + 1];
    for j in (0..n).rev() {
        r[j] = std::array::from_fn(|i| r[j + 1][i] + 0.5 * h * (integrand[j][i] + integrand[j + 1][i]));
    }
    let density: Vec<[C64; 4]> = (0..=n)
        .map(|j| {
            let v = lam_inv[j].vecmat(&r[j]);
            [v[0], v[1], v[2], v[3]]
        })
        .collect();
    let mut grad = ControlGradient::zeros(grid.n_bins, GradientMode::FullChain);
    for bin in 0..grid.n_bins {
        let mut acc = [ZERO; 4];
        for j in bin * spb..(bin + 1) * spb {
            for i in 0..4 {
                acc[i] += 0.5 * h * (density[j][i] + density[j + 1][i]);
            }
        }
        let (om, ph) = (mf.drive.omega[bin], mf.drive.phi[bin]);
        grad.d_omega[bin] = realize(
            control_kick(om, ph, Control::Amplitude, KickWeight::Full).dot(&acc),
            bin,
        )?;
        grad.d_phi[bin] = realize(control_kick(om, ph, Control::Phase, KickWeight::Full).dot(&acc), bin)?;
    }
    Ok(grad)
}

/// Difference stencil used by the finite-difference oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stencil {
    /// `(f(h) − f(−h)) / 2h`, error O(h²).
    Central3,
    /// `(−f(2h) + 8f(h) − 8f(−h) + f(−2h)) / 12h`, error O(h⁴).
    Central5,
}

/// Central differences of the end-to-end loss, one bin and one control at a
/// time, with step `h_rel · max(1, |Q_k|)`.
pub fn finite_difference_gradient(
    pulse: &Pulse,
    p: &SystemParams,
    loss: &LossFunctional,
    h_rel: f64,
    dt: f64,
) -> Result<ControlGradient> {
    finite_difference_gradient_with(pulse, p, loss, h_rel, dt, Stencil::Central3)
}

pub fn finite_difference_gradient_with(
    pulse: &Pulse,
    p: &SystemParams,
    loss: &LossFunctional,
    h_rel: f64,
    dt: f64,
    stencil: Stencil,
) -> Result<ControlGradient> {
    if !(h_rel > 1e-8 && h_rel < 1e-2) {
        return Err(Error::invalid("h_rel", "must lie in (1e-8, 1e-2)"));
    }
    let n = pulse.n_bins();
    let mut grad = ControlGradient::zeros(n, GradientMode::FiniteDifference);
    let mut probe = pulse.clone();
    for k in 0..n {
        for control in [Control::Amplitude, Control::Phase] {
            let base = match control {
                Control::Amplitude => pulse.omega[k],
                Control::Phase => pulse.phi[k],
            };
            let step = h_rel * base.abs().max(1.0);
            let mut eval = |offset: f64| -> Result<f64> {
                match control {
                    Control::Amplitude => probe.omega[k] = base + offset * step,
                    Control::Phase => probe.phi[k] = base + offset * step,
                }
                evaluate_loss(&probe, p, loss, dt)
            };
            let d = match stencil {
                Stencil::Central3 => (eval(1.0)? - eval(-1.0)?) / (2.0 * step),
                Stencil::Central5 => (8.0 * (eval(1.0)? - eval(-1.0)?) - (eval(2.0)? - eval(-2.0)?)) / (12.0 * step),
            };
            match control {
                Control::Amplitude => {
                    probe.omega[k] = base;
                    grad.d_omega[k] = d;
                }
                Control::Phase => {
                    probe.phi[k] = base;
                    grad.d_phi[k] = d;
                }
            }
        }
    }
    Ok(grad)
}

/// Largest per-entry relative deviation of `a` from `b`, skipping entries
/// where both magnitudes are below `floor`.
pub fn max_relative_error(a: &ControlGradient, b: &ControlGradient, floor: f64) -> f64 {
    a.flat()
        .iter()
        .zip(b.flat())
        .filter(|(x, y)| x.abs() >= floor || y.abs() >= floor)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()))
        .fold(0.0, f64::max)
}

pub fn cosine_similarity(a: &ControlGradient, b: &ControlGradient) -> f64 {
    let (fa, fb) = (a.flat(), b.flat());
    let dot: f64 = fa.iter().zip(&fb).map(|(x, y)| x * y).sum();
    let na: f64 = fa.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = fb.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

/// Loss and gradient of the integrated system at an arbitrary initial state,
/// used when the optimizer is seeded from a non-thermal state.
pub fn full_chain_from(
    pulse: &Pulse,
    p: &SystemParams,
    loss: &LossFunctional,
    mf0: MeanFieldState,
    x0: &MomentVector,
    dt: f64,
) -> Result<(f64, ControlGradient)> {
    let mf = integrate_meanfield(pulse, p, mf0, dt)?;
    let mom = integrate_moments(&mf, x0)?;
    let grad = full_chain(&mf, &mom, loss)?;
    Ok((loss.value(&mom.final_moments()), grad))
}

/// Thermal-start shorthand used by tests and the CLI.
pub fn thermal_start(p: &SystemParams) -> (MeanFieldState, MomentVector) {
    (MeanFieldState::default(), thermal_initial_moments(p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{drift_matrix, inhomogeneous_term};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pulse(rng: &mut ChaCha8Rng, t: f64, n: usize, scale: f64) -> Pulse {
        Pulse::new(
            t,
            (0..n).map(|_| scale * (0.5 + rng.gen::<f64>())).collect(),
            (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn kick_examples() {
        let k = control_kick(3.0, 0.0, Control::Amplitude, KickWeight::Half);
        assert_eq!(k.k, [C64::new(0.0, 0.5), ZERO, C64::new(0.0, -0.5), ZERO]);
        let k = control_kick(0.0, 1.3, Control::Phase, KickWeight::Half);
        assert!(k.k.iter().all(|z| z.norm() == 0.0));
        let k = control_kick(3.0, std::f64::consts::FRAC_PI_2, Control::Amplitude, KickWeight::Half);
        for (got, want) in k.k.iter().zip([0.5, 0.0, 0.5, 0.0]) {
            assert!((got - C64::from(want)).norm() < 1e-15);
        }
        let full = control_kick(2.0, 0.4, Control::Phase, KickWeight::Full);
        let half = control_kick(2.0, 0.4, Control::Phase, KickWeight::Half);
        for i in 0..4 {
            assert!((full.k[i] - 2.0 * half.k[i]).norm() < 1e-15);
        }
        assert_eq!(full.k[2], full.k[0].conj());
    }

    #[test]
    fn sensitivity_of_vacuum_moments() {
        let p = SystemParams::default();
        let b = sensitivity_matrix(&MeanFieldState::default(), &MomentVector::default(), &p);
        for (r, row) in b.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                let expect = match (r, c) {
                    (5, 2) => C64::new(0.0, p.g0),
                    (8, 0) => C64::new(0.0, -p.g0),
                    _ => ZERO,
                };
                assert_eq!(*v, expect, "B[{r}][{c}]");
            }
        }
        let free = SystemParams { g0: 0.0, ..p };
        let x = MomentVector::new(std::array::from_fn(|i| C64::new(i as f64, 1.0)));
        let b = sensitivity_matrix(&MeanFieldState::new(C64::new(5.0, 1.0), C64::new(1.0, 1.0)), &x, &free);
        assert!(b.iter().flatten().all(|v| *v == ZERO));
    }

    /// Finite-difference check of each column of B through Wirtinger
    /// derivatives of `M(α,β) x + N(α)`.
    #[test]
    fn sensitivity_matches_finite_differences() {
        let p = SystemParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let mf = MeanFieldState::new(
                C64::new(rng.gen_range(-3e3..3e3), rng.gen_range(-3e3..3e3)),
                C64::new(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0)),
            );
            let x = MomentVector::new(std::array::from_fn(|_| {
                C64::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0))
            }));
            let f = |m: &MeanFieldState| -> Vec<C64> {
                let mx = drift_matrix(m, &p).matvec(&x.x);
                let n = inhomogeneous_term(m, &p);
                mx.iter().zip(n).map(|(a, b)| a + b).collect()
            };
            let b = sensitivity_matrix(&mf, &x, &p);
            for (field, col, col_conj) in [(0usize, 0usize, 2usize), (1, 1, 3)] {
                let hstep = 1e-6 * if field == 0 { mf.alpha.norm() } else { mf.beta.norm() };
                let shifted = |dz: C64| {
                    let mut m = mf;
                    if field == 0 {
                        m.alpha += dz;
                    } else {
                        m.beta += dz;
                    }
                    f(&m)
                };
                let (pr, mr) = (shifted(C64::new(hstep, 0.0)), shifted(C64::new(-hstep, 0.0)));
                let (pi, mi) = (shifted(C64::new(0.0, hstep)), shifted(C64::new(0.0, -hstep)));
                for r in 0..10 {
                    let d_re = (pr[r] - mr[r]) / (2.0 * hstep);
                    let d_im = (pi[r] - mi[r]) / (2.0 * hstep);
                    let dz = 0.5 * (d_re - I * d_im);
                    let dzc = 0.5 * (d_re + I * d_im);
                    let tol = 1e-6 * (1e-12 + b[r][col].norm().max(b[r][col_conj].norm()));
                    assert!(
                        (dz - b[r][col]).norm() <= tol.max(1e-13),
                        "row {r} col {col}: {dz} vs {}",
                        b[r][col]
                    );
                    assert!(
                        (dzc - b[r][col_conj]).norm() <= tol.max(1e-13),
                        "row {r} col {col_conj}"
                    );
                }
            }
        }
    }

    #[test]
    fn loss_weights_reproduce_variance() {
        let mut x = crate::model::thermal_moments(0.7);
        x.x[idx::B_B] = C64::new(0.2, -0.35);
        x.x[idx::BD_BD] = x.x[idx::B_B].conj();
        let cov = crate::analysis::covariance_unchecked(&x);
        for k in 0..16 {
            let th = k as f64 * 0.4;
            let a = LossFunctional::quadrature_variance(th).value(&x);
            let b = crate::analysis::quadrature_variance(&cov, th);
            assert!((a - b).abs() < 1e-14);
        }
        assert!((LossFunctional::v34().value(&x) - cov.v[2][3]).abs() < 1e-15);
    }

    fn small_instance(seed: u64) -> (Pulse, SystemParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (random_pulse(&mut rng, 1.0, 20, 4e3), SystemParams::default())
    }

    #[test]
    fn full_chain_matches_finite_differences() {
        let (pulse, p) = small_instance(11);
        let loss = LossFunctional::quadrature_variance(std::f64::consts::FRAC_PI_2);
        let settings = GradientSettings::default();
        let fc = loss_gradient(&pulse, &p, &loss, GradientMode::FullChain, &settings).unwrap();
        let fd = loss_gradient(&pulse, &p, &loss, GradientMode::FiniteDifference, &settings).unwrap();
        let err = max_relative_error(&fc, &fd, 1e-12);
        assert!(err <= 1e-4, "max relative error {err:e}");
    }

    #[test]
    fn explicit_propagator_route_agrees_with_adjoint_sweep() {
        let (pulse, p) = small_instance(5);
        let loss = LossFunctional::quadrature_variance(0.9);
        let (mf, mom) = forward(&pulse, &p, 0.001).unwrap();
        let adj = full_chain(&mf, &mom, &loss).unwrap();
        let exp = full_chain_explicit(&mf, &mom, &loss).unwrap();
        // The explicit route is second order; compare entries that are not
        // dominated by its quadrature error.
        let scale = adj.flat().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = max_relative_error(&adj, &exp, 1e-3 * scale);
        assert!(err < 1e-4, "{err:e}");
    }

    #[test]
    fn zero_drive_has_no_phase_gradient() {
        let pulse = Pulse::zero(1.0, 10);
        let p = SystemParams::default();
        let loss = LossFunctional::v44();
        for mode in [GradientMode::FullChain, GradientMode::PaperPointwise] {
            let g = loss_gradient(&pulse, &p, &loss, mode, &GradientSettings::default()).unwrap();
            assert!(g.d_phi.iter().all(|v| *v == 0.0), "{mode:?}");
        }
    }

    #[test]
    fn decoupled_system_has_zero_gradient() {
        let (pulse, p) = small_instance(3);
        let p = SystemParams { g0: 0.0, ..p };
        let loss = LossFunctional::v44();
        let s = GradientSettings::default();
        for mode in [GradientMode::FullChain, GradientMode::FiniteDifference] {
            let g = loss_gradient(&pulse, &p, &loss, mode, &s).unwrap();
            assert!(g.flat().iter().all(|v| *v == 0.0), "{mode:?}");
        }
    }

    #[test]
    fn finite_difference_step_robustness() {
        let (pulse, p) = small_instance(21);
        let loss = LossFunctional::v44();
        let a = finite_difference_gradient(&pulse, &p, &loss, 1e-4, 0.005).unwrap();
        let b = finite_difference_gradient(&pulse, &p, &loss, 1e-5, 0.005).unwrap();
        assert!(max_relative_error(&a, &b, 1e-12) <= 1e-3);
    }

    /// Phase entries of the first bin are tiny (the cavity starts empty), so
    /// the three-point rule at h_rel = 1e-4 is at the rounding floor of a
    /// loss of order n̄m there; the five-point rule with a larger step is not.
    #[test]
    fn five_point_stencil_resolves_small_entries() {
        let (pulse, p) = small_instance(5);
        let loss = LossFunctional::quadrature_variance(0.9);
        let s = GradientSettings::default();
        let fc = loss_gradient(&pulse, &p, &loss, GradientMode::FullChain, &s).unwrap();
        let fd = finite_difference_gradient_with(&pulse, &p, &loss, 5e-3, s.dt, Stencil::Central5).unwrap();
        assert!(fc.d_phi[0].abs() < 1e-4 * fc.d_phi.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        assert!(max_relative_error(&fc, &fd, 1e-12) <= 1e-4);
    }

    #[test]
    fn finite_difference_step_range_enforced() {
        let (pulse, p) = small_instance(1);
        assert!(finite_difference_gradient(&pulse, &p, &LossFunctional::v44(), 0.1, 0.005).is_err());
    }

    /// A global phase offset leaves the mechanics unchanged, so the phase
    /// gradients must sum to zero.
    #[test]
    fn global_phase_invariance() {
        let (pulse, p) = small_instance(8);
        let loss = LossFunctional::quadrature_variance(0.3);
        let g = loss_gradient(&pulse, &p, &loss, GradientMode::FullChain, &GradientSettings::default()).unwrap();
        let sum: f64 = g.d_phi.iter().sum();
        let scale: f64 = g.d_phi.iter().map(|v| v.abs()).sum();
        assert!(sum.abs() <= 1e-6 * scale, "{sum:e} vs {scale:e}");
    }

    #[test]
    fn gradient_is_linear_in_the_loss() {
        let (pulse, p) = small_instance(13);
        let s = GradientSettings::default();
        let (a, b) = (0.37, -1.9);
        let comb = LossFunctional::v33().combine(a, &LossFunctional::v44(), b);
        let g33 = loss_gradient(&pulse, &p, &LossFunctional::v33(), GradientMode::FullChain, &s).unwrap();
        let g44 = loss_gradient(&pulse, &p, &LossFunctional::v44(), GradientMode::FullChain, &s).unwrap();
        let gc = loss_gradient(&pulse, &p, &comb, GradientMode::FullChain, &s).unwrap();
        for ((x, y), z) in g33.flat().iter().zip(g44.flat()).zip(gc.flat()) {
            assert!((a * x + b * y - z).abs() <= 1e-9 * (1.0 + z.abs()));
        }
    }
}
