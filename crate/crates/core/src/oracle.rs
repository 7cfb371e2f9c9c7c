//! Truncated Fock-space master-equation integrator, used as an independent
//! check of the second-moment equations at small occupations.
//!
//! The density operator of the fluctuations lives on `dim_a × dim_b` number
//! states; the product index is `i·dim_b + j` for cavity level `i` and
//! mechanical level `j`. Operators are kept as coordinate lists.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{MeanFieldTrajectory, MomentTrajectory};
use crate::error::{Error, Result};
use crate::model::{MeanFieldState, MomentVector, SystemParams};

const I: C64 = C64 { re: 0.0, im: 1.0 };
const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Population allowed on the highest retained level of either mode.
pub const TRUNCATION_LIMIT: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FockConfig {
    pub dim_a: usize,
    pub dim_b: usize,
    /// Keep the `−g0 a†a (b + b†)` term dropped by the linearization.
    pub include_nonlinear: bool,
    /// Largest integration step; the trajectory steps are subdivided to meet it.
    pub dt: f64,
}

impl Default for FockConfig {
    fn default() -> Self {
        FockConfig {
            dim_a: 8,
            dim_b: 10,
            include_nonlinear: false,
            dt: 0.005,
        }
    }
}

impl FockConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim_a < 2 {
            return Err(Error::invalid("dim_a", "must be >= 2"));
        }
        if self.dim_b < 2 {
            return Err(Error::invalid("dim_b", "must be >= 2"));
        }
        if !(self.dt > 0.0) {
            return Err(Error::invalid("dt", "must be > 0"));
        }
        Ok(())
    }
}

/// Sparse square operator on the product space.
#[derive(Debug, Clone)]
struct SparseOp {
    entries: Vec<(usize, usize, C64)>,
}

impl SparseOp {
    fn product(&self, rhs: &SparseOp, n: usize) -> SparseOp {
        let mut dense = vec![ZERO; n * n];
        for &(r1, c1, v1) in &self.entries {
            for &(r2, c2, v2) in &rhs.entries {
                if c1 == r2 {
                    dense[r1 * n + c2] += v1 * v2;
                }
            }
        }
        SparseOp::from_dense(&dense, n)
    }

    fn from_dense(d: &[C64], n: usize) -> SparseOp {
        let entries = (0..n * n)
            .filter(|&k| d[k] != ZERO)
            .map(|k| (k / n, k % n, d[k]))
            .collect();
        SparseOp { entries }
    }

    fn adjoint(&self) -> SparseOp {
        SparseOp {
            entries: self.entries.iter().map(|&(r, c, v)| (c, r, v.conj())).collect(),
        }
    }

    fn sum(&self, rhs: &SparseOp, n: usize) -> SparseOp {
        let mut dense = vec![ZERO; n * n];
        for &(r, c, v) in self.entries.iter().chain(&rhs.entries) {
            dense[r * n + c] += v;
        }
        SparseOp::from_dense(&dense, n)
    }

    /// `Tr(ρ A)`.
    fn expectation(&self, rho: &[C64], n: usize) -> C64 {
        self.entries.iter().map(|&(r, c, v)| v * rho[c * n + r]).sum()
    }
}

/// Ladder operators and the products needed by the Lindbladian.
struct Operators {
    n: usize,
    a: SparseOp,
    b: SparseOp,
    num_a: SparseOp,
    num_b: SparseOp,
    b_bd: SparseOp,
    ad_x: SparseOp,
    a_x: SparseOp,
    num_a_x: SparseOp,
    moments: Vec<SparseOp>,
}

impl Operators {
    fn new(da: usize, db: usize) -> Self {
        let n = da * db;
        let index = |i: usize, j: usize| i * db + j;
        let mut a = Vec::new();
        let mut b = Vec::new();
        for i in 0..da {
            for j in 0..db {
                if i > 0 {
                    a.push((index(i - 1, j), index(i, j), C64::from((i as f64).sqrt())));
                }
                if j > 0 {
                    b.push((index(i, j - 1), index(i, j), C64::from((j as f64).sqrt())));
                }
            }
        }
        let a = SparseOp { entries: a };
        let b = SparseOp { entries: b };
        let ad = a.adjoint();
        let bd = b.adjoint();
        let x = b.sum(&bd, n);
        let num_a = ad.product(&a, n);
        let num_b = bd.product(&b, n);
        let moments = vec![
            num_a.clone(),
            num_b.clone(),
            ad.product(&b, n),
            a.product(&bd, n),
            ad.product(&ad, n),
            ad.product(&bd, n),
            bd.product(&bd, n),
            a.product(&a, n),
            a.product(&b, n),
            b.product(&b, n),
        ];
        Operators {
            n,
            b_bd: b.product(&bd, n),
            ad_x: ad.product(&x, n),
            a_x: a.product(&x, n),
            num_a_x: num_a.product(&x, n),
            a,
            b,
            num_a,
            num_b,
            moments,
        }
    }
}

/// Non-Hermitian effective Hamiltonian and jump operators at one instant.
struct Generator<'a> {
    ops: &'a Operators,
    heff: Vec<(C64, &'a SparseOp)>,
    jumps: [(f64, &'a SparseOp, bool); 3],
}

impl<'a> Generator<'a> {
    fn new(ops: &'a Operators, mf: &MeanFieldState, p: &SystemParams, nonlinear: bool) -> Self {
        let g = mf.coupling(p);
        let delta = mf.detuning(p);
        let mut heff = vec![
            (C64::new(delta, -0.5 * p.kappa), &ops.num_a),
            (C64::new(p.omega_m, -0.5 * p.gamma * (p.n_bar_m + 1.0)), &ops.num_b),
            (C64::new(0.0, -0.5 * p.gamma * p.n_bar_m), &ops.b_bd),
            (g, &ops.ad_x),
            (g.conj(), &ops.a_x),
        ];
        if nonlinear {
            heff.push((C64::from(-p.g0), &ops.num_a_x));
        }
        Generator {
            ops,
            heff,
            // (rate, operator L, use L† instead of L)
            jumps: [
                (p.kappa, &ops.a, false),
                (p.gamma * (p.n_bar_m + 1.0), &ops.b, false),
                (p.gamma * p.n_bar_m, &ops.b, true),
            ],
        }
    }

    /// `ρ̇ = −i(H_eff ρ − ρ H_eff†) + Σ γ_k L_k ρ L_k†`.
    fn apply(&self, rho: &[C64], out: &mut [C64]) {
        let n = self.ops.n;
        out.iter_mut().for_each(|v| *v = ZERO);
        for &(coef, op) in &self.heff {
            let left = -I * coef;
            let right = I * coef.conj();
            for &(r, c, v) in &op.entries {
                // −i coef (A ρ)[r, :]
                let lv = left * v;
                let src = &rho[c * n..(c + 1) * n];
                for (o, s) in out[r * n..(r + 1) * n].iter_mut().zip(src) {
                    *o += lv * s;
                }
                // + i coef* (ρ A†)[:, r] with (A†)[c, r] = conj(v)
                let rv = right * v.conj();
                for row in 0..n {
                    out[row * n + r] += rv * rho[row * n + c];
                }
            }
        }
        for &(rate, op, dagger) in &self.jumps {
            if rate == 0.0 {
                continue;
            }
            for &(r1, c1, v1) in &op.entries {
                let (r1, c1, v1) = if dagger { (c1, r1, v1.conj()) } else { (r1, c1, v1) };
                for &(r2, c2, v2) in &op.entries {
                    let (r2, c2, v2) = if dagger { (c2, r2, v2.conj()) } else { (r2, c2, v2) };
                    out[r1 * n + r2] += rate * v1 * v2.conj() * rho[c1 * n + c2];
                }
            }
        }
    }
}

/// Oracle run: moments on the trajectory grid plus conservation diagnostics.
#[derive(Debug, Clone)]
pub struct FockReference {
    pub moments: MomentTrajectory,
    /// Largest |Tr ρ − 1| seen.
    pub trace_error: f64,
    /// Largest entry of |ρ − ρ†| seen.
    pub hermiticity_error: f64,
    /// Largest population on the top retained level of either mode.
    pub top_population: f64,
}

fn thermal_populations(n_bar: f64, dim: usize) -> Vec<f64> {
    let mut pops: Vec<f64> = (0..dim)
        .map(|k| {
            if n_bar == 0.0 {
                if k == 0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                (n_bar / (1.0 + n_bar)).powi(k as i32) / (1.0 + n_bar)
            }
        })
        .collect();
    let total: f64 = pops.iter().sum();
    pops.iter_mut().for_each(|v| *v /= total);
    pops
}

/// Populations of the highest retained cavity and mechanical levels.
fn top_populations(rho: &[C64], da: usize, db: usize) -> (f64, f64) {
    let n = da * db;
    let diag = |i: usize, j: usize| rho[(i * db + j) * n + i * db + j].re;
    let top_a: f64 = (0..db).map(|j| diag(da - 1, j)).sum();
    let top_b: f64 = (0..da).map(|i| diag(i, db - 1)).sum();
    (top_a, top_b)
}

fn check_truncation(rho: &[C64], da: usize, db: usize, worst: &mut f64) -> Result<()> {
    let (top_a, top_b) = top_populations(rho, da, db);
    *worst = worst.max(top_a).max(top_b);
    if top_a > TRUNCATION_LIMIT {
        return Err(Error::TruncationBreach {
            mode: "cavity",
            population: top_a,
        });
    }
    if top_b > TRUNCATION_LIMIT {
        return Err(Error::TruncationBreach {
            mode: "mechanics",
            population: top_b,
        });
    }
    Ok(())
}

/// Integrates the master equation along `traj`, with the cavity initially in
/// vacuum and the mechanics thermal at `n_bar0`, and records the ten second
/// moments at every trajectory grid point.
pub fn fock_reference_moments(
    traj: &MeanFieldTrajectory,
    p: &SystemParams,
    fc: &FockConfig,
    n_bar0: f64,
) -> Result<FockReference> {
    fc.validate()?;
    p.validate()?;
    let (da, db) = (fc.dim_a, fc.dim_b);
    let expected_b = n_bar0.max(p.n_bar_m);
    if expected_b > db as f64 / 4.0 {
        log::warn!("mechanical occupation {expected_b} is large for a truncation at {db} levels");
    }
    let ops = Operators::new(da, db);
    let n = ops.n;

    let mut rho = vec![ZERO; n * n];
    for (j, pj) in thermal_populations(n_bar0, db).into_iter().enumerate() {
        rho[j * n + j] = C64::from(pj);
    }

    let grid = traj.grid;
    let h_traj = grid.dt();
    let substeps = ((h_traj / fc.dt) - 1e-9).ceil().max(1.0) as usize;
    let h = h_traj / substeps as f64;

    let extract = |rho: &[C64]| -> MomentVector {
        MomentVector::new(std::array::from_fn(|k| ops.moments[k].expectation(rho, n)))
    };
    let mut out = Vec::with_capacity(grid.n_steps() + 1);
    out.push(extract(&rho));

    let mut diag = FockReference {
        moments: MomentTrajectory {
            grid,
            moments: Vec::new(),
        },
        trace_error: 0.0,
        hermiticity_error: 0.0,
        top_population: 0.0,
    };
    check_truncation(&rho, da, db, &mut diag.top_population)?;

    let mut k1 = vec![ZERO; n * n];
    let mut k2 = vec![ZERO; n * n];
    let mut k3 = vec![ZERO; n * n];
    let mut k4 = vec![ZERO; n * n];
    let mut tmp = vec![ZERO; n * n];
    for j in 0..grid.n_steps() {
        for sub in 0..substeps {
            let s0 = sub as f64 / substeps as f64;
            let sm = (sub as f64 + 0.5) / substeps as f64;
            let s1 = (sub as f64 + 1.0) / substeps as f64;
            let g0 = Generator::new(&ops, &traj.interpolate(j, s0), p, fc.include_nonlinear);
            let gm = Generator::new(&ops, &traj.interpolate(j, sm), p, fc.include_nonlinear);
            let g1 = Generator::new(&ops, &traj.interpolate(j, s1), p, fc.include_nonlinear);

            g0.apply(&rho, &mut k1);
            axpy(&rho, 0.5 * h, &k1, &mut tmp);
            gm.apply(&tmp, &mut k2);
            axpy(&rho, 0.5 * h, &k2, &mut tmp);
            gm.apply(&tmp, &mut k3);
            axpy(&rho, h, &k3, &mut tmp);
            g1.apply(&tmp, &mut k4);
            for i in 0..n * n {
                rho[i] += (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) * (h / 6.0);
            }
        }
        let trace: C64 = (0..n).map(|i| rho[i * n + i]).sum();
        diag.trace_error = diag.trace_error.max((trace - 1.0).norm());
        let mut herm = 0.0f64;
        for r in 0..n {
            for c in r..n {
                herm = herm.max((rho[r * n + c] - rho[c * n + r].conj()).norm());
            }
        }
        diag.hermiticity_error = diag.hermiticity_error.max(herm);
        check_truncation(&rho, da, db, &mut diag.top_population)?;
        out.push(extract(&rho));
    }
    diag.moments.moments = out;
    Ok(diag)
}

fn axpy(y: &[C64], a: f64, x: &[C64], out: &mut [C64]) {
    for ((o, y), x) in out.iter_mut().zip(y).zip(x) {
        *o = y + x * a;
    }
}

/// Per-point worst relative deviation of `test` from `reference`; entries
/// whose reference magnitude is below `floor` are compared against `floor`.
pub fn moment_deviation(test: &MomentTrajectory, reference: &MomentTrajectory, floor: f64) -> Vec<f64> {
    test.moments
        .iter()
        .zip(&reference.moments)
        .map(|(a, b)| {
            a.x.iter()
                .zip(&b.x)
                .map(|(u, v)| (u - v).norm() / v.norm().max(floor))
                .fold(0.0, f64::max)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::integrate_meanfield;
    use crate::model::Pulse;

    fn small_params(n_bar_m: f64) -> SystemParams {
        SystemParams {
            n_bar_m,
            ..SystemParams::default()
        }
    }

    #[test]
    fn ladder_operators_satisfy_commutator_below_truncation() {
        let ops = Operators::new(3, 4);
        let n = ops.n;
        let ad = ops.a.adjoint();
        let aad = ops.a.product(&ad, n);
        // [a, a†] = 1 except on the top cavity level.
        let mut dense = vec![ZERO; n * n];
        for &(r, c, v) in &aad.entries {
            dense[r * n + c] += v;
        }
        for &(r, c, v) in &ops.num_a.entries {
            dense[r * n + c] -= v;
        }
        for i in 0..3 {
            for j in 0..4 {
                let k = i * 4 + j;
                let expect = if i < 2 { 1.0 } else { -2.0 };
                assert!((dense[k * n + k] - expect).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn thermal_state_is_stationary_without_coupling() {
        let p = small_params(0.2);
        let pulse = Pulse::zero(2.0, 4);
        let traj = integrate_meanfield(&pulse, &p, MeanFieldState::default(), 0.01).unwrap();
        let fc = FockConfig {
            dim_a: 2,
            dim_b: 12,
            ..Default::default()
        };
        let r = fock_reference_moments(&traj, &p, &fc, 0.2).unwrap();
        let expected = thermal_populations(0.2, 12)
            .iter()
            .enumerate()
            .map(|(k, p)| k as f64 * p)
            .sum::<f64>();
        for x in &r.moments.moments {
            assert!((x.phonons() - expected).abs() < 1e-10);
            for (k, v) in x.x.iter().enumerate() {
                if k != 1 {
                    assert!(v.norm() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn mechanical_decay_to_zero_temperature() {
        let p = SystemParams {
            n_bar_m: 0.0,
            gamma: 0.05,
            ..SystemParams::default()
        };
        let pulse = Pulse::zero(10.0, 10);
        let traj = integrate_meanfield(&pulse, &p, MeanFieldState::default(), 0.01).unwrap();
        let fc = FockConfig {
            dim_a: 2,
            dim_b: 14,
            ..Default::default()
        };
        let r = fock_reference_moments(&traj, &p, &fc, 0.5).unwrap();
        let n0 = r.moments.moments[0].phonons();
        assert!((n0 - 0.5).abs() < 2e-3, "truncated thermal mean {n0}");
        for (j, x) in r.moments.moments.iter().enumerate() {
            let t = traj.grid.time(j);
            assert!((x.phonons() - n0 * (-p.gamma * t).exp()).abs() < 1e-6);
        }
    }

    #[test]
    fn trace_and_hermiticity_preserved() {
        let p = SystemParams {
            g0: 4e-5,
            n_bar_m: 0.2,
            ..SystemParams::default()
        };
        let pulse = Pulse::constant(2.0, 4, 2500.0, 0.3);
        let traj = integrate_meanfield(&pulse, &p, MeanFieldState::default(), 0.01).unwrap();
        let r = fock_reference_moments(
            &traj,
            &p,
            &FockConfig {
                dim_a: 5,
                dim_b: 6,
                ..Default::default()
            },
            0.2,
        )
        .unwrap();
        assert!(r.trace_error < 1e-8, "{}", r.trace_error);
        assert!(r.hermiticity_error < 1e-10, "{}", r.hermiticity_error);
        for x in &r.moments.moments {
            assert!(x.conjugacy_residual() < 1e-9);
        }
    }

    #[test]
    fn truncation_breach_reported() {
        let p = small_params(0.2);
        let pulse = Pulse::zero(1.0, 2);
        let traj = integrate_meanfield(&pulse, &p, MeanFieldState::default(), 0.01).unwrap();
        let fc = FockConfig {
            dim_a: 2,
            dim_b: 3,
            ..Default::default()
        };
        match fock_reference_moments(&traj, &p, &fc, 2.0) {
            Err(Error::TruncationBreach { mode, .. }) => assert_eq!(mode, "mechanics"),
            other => panic!("expected a truncation breach, got {other:?}"),
        }
    }
}
