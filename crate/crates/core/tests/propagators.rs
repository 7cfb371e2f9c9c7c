use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use optosqueeze::dynamics::{
    drift_matrix, integrate_meanfield, propagator_meanfield, propagator_moments, MeanFieldTrajectory,
};
use optosqueeze::linalg::CMat;
use optosqueeze::{MeanFieldState, Pulse, SystemParams};

const DT: f64 = 0.005;

fn to_nalgebra(m: &CMat) -> DMatrix<C64> {
    DMatrix::from_fn(m.dim, m.dim, |i, j| m.get(i, j))
}

fn max_diff(a: &CMat, b: &DMatrix<C64>) -> f64 {
    let mut d: f64 = 0.0;
    for i in 0..a.dim {
        for j in 0..a.dim {
            d = d.max((a.get(i, j) - b[(i, j)]).norm());
        }
    }
    d
}

/// Constant drive holding the mean fields at the fixed point with cavity
/// amplitude `alpha`.
fn fixed_point(alpha: C64, p: &SystemParams, t_final: f64, n_bins: usize) -> (Pulse, MeanFieldState) {
    let i = C64::i();
    let beta = -i * p.g0 * alpha.norm_sqr() / (i * p.omega_m + p.gamma / 2.0);
    let delta = p.delta_c + 2.0 * p.g0 * beta.re;
    let drive = (i * delta + p.kappa / 2.0) * alpha / i;
    let pulse = Pulse::constant(t_final, n_bins, drive.norm(), -drive.arg());
    (pulse, MeanFieldState::new(alpha, beta))
}

fn smooth_trajectory(p: &SystemParams) -> MeanFieldTrajectory {
    let n = 40;
    let omega = (0..n).map(|k| 2000.0 + 900.0 * (0.4 * k as f64).sin()).collect();
    let phi = (0..n).map(|k| 0.3 * (0.25 * k as f64).cos()).collect();
    let pulse = Pulse::new(4.0, omega, phi).unwrap();
    integrate_meanfield(&pulse, p, MeanFieldState::default(), DT).unwrap()
}

#[test]
fn frozen_fields_give_matrix_exponential() {
    let p = SystemParams::default();
    let (pulse, mf0) = fixed_point(C64::new(900.0, -1500.0), &p, 5.0, 10);
    let traj = integrate_meanfield(&pulse, &p, mf0, DT).unwrap();
    let drift = (traj.final_state().alpha - mf0.alpha).norm();
    assert!(drift < 1e-8 * mf0.alpha.norm(), "fields drifted by {drift}");

    let m = to_nalgebra(&drift_matrix(&mf0, &p));
    let grid = propagator_moments(&traj).unwrap();
    for (k, phi) in grid.mats.iter().enumerate() {
        let tau = pulse.t_final - grid.times[k];
        let want = (m.clone() * C64::from(tau)).exp();
        let scale = want.iter().fold(1.0f64, |a, z| a.max(z.norm()));
        assert!(
            max_diff(phi, &want) <= 1e-8 * scale,
            "bin {k}: {:e}",
            max_diff(phi, &want)
        );
    }
}

#[test]
fn moment_propagator_is_identity_at_final_time() {
    let p = SystemParams::default();
    let grid = propagator_moments(&smooth_trajectory(&p)).unwrap();
    assert_eq!(grid.mats.last().unwrap().max_abs_diff(&CMat::identity(10)), 0.0);
    assert_eq!(*grid.times.last().unwrap(), 4.0);
}

#[test]
fn moment_propagator_composes_across_halves() {
    let p = SystemParams::default();
    let full = smooth_trajectory(&p);
    let pulse = &full.drive;
    let half = pulse.n_bins() / 2;
    let t_mid = pulse.bin_start(half);
    let first = Pulse::new(t_mid, pulse.omega[..half].to_vec(), pulse.phi[..half].to_vec()).unwrap();
    let second = Pulse::new(
        pulse.t_final - t_mid,
        pulse.omega[half..].to_vec(),
        pulse.phi[half..].to_vec(),
    )
    .unwrap();
    let a = integrate_meanfield(&first, &p, MeanFieldState::default(), DT).unwrap();
    let b = integrate_meanfield(&second, &p, a.final_state(), DT).unwrap();

    let phi_full = propagator_moments(&full).unwrap();
    let phi_a = propagator_moments(&a).unwrap();
    let phi_b = propagator_moments(&b).unwrap();
    let t_m = &phi_b.mats[0];
    for k in [0, 5, half - 1] {
        let composed = t_m.matmul(&phi_a.mats[k]);
        let diff = composed.max_abs_diff(&phi_full.mats[k]);
        assert!(diff <= 1e-7 * (1.0 + phi_full.mats[k].norm()), "bin {k}: {diff:e}");
    }
}

#[test]
fn meanfield_propagator_starts_at_identity_and_inverts() {
    let p = SystemParams::default();
    let grid = propagator_meanfield(&smooth_trajectory(&p)).unwrap();
    let inv = grid.inverses.as_ref().unwrap();
    assert_eq!(grid.mats[0].max_abs_diff(&CMat::identity(4)), 0.0);
    assert_eq!(inv[0].max_abs_diff(&CMat::identity(4)), 0.0);
    for (l, li) in grid.mats.iter().zip(inv) {
        assert!(l.matmul(li).max_abs_diff(&CMat::identity(4)) <= 1e-8);
    }
}

#[test]
fn uncoupled_meanfield_propagator_is_diagonal_exponential() {
    let p = SystemParams {
        g0: 0.0,
        ..SystemParams::default()
    };
    let grid = propagator_meanfield(&smooth_trajectory(&p)).unwrap();
    let i = C64::i();
    let ra = -(i * p.delta_c + p.kappa / 2.0);
    let rb = -(i * p.omega_m + p.gamma / 2.0);
    for (t, l) in grid.times.iter().zip(&grid.mats) {
        let d = [
            (ra * t).exp(),
            (rb * t).exp(),
            (ra.conj() * t).exp(),
            (rb.conj() * t).exp(),
        ];
        for r in 0..4 {
            for c in 0..4 {
                let want = if r == c { d[r] } else { C64::new(0.0, 0.0) };
                assert!((l.get(r, c) - want).norm() <= 1e-9, "t = {t}, ({r},{c})");
            }
        }
    }
}
