//! Parameter studies built on the simulator and optimizer: angle and
//! sideband sweeps, deviation and noise robustness of a learned pulse, and
//! free decay after the drive is switched off.

use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::analysis::{covariance_unchecked, principal_variance, squeezing_degree, SqueezingReport};
use crate::dynamics::{integrate_meanfield, integrate_moments, simulate, MomentTrajectory};
use crate::error::{Error, Result};
use crate::gradient::GradientMode;
use crate::model::{Pulse, SystemParams};
use crate::optimizer::{optimize, OptimizationResult, OptimizerConfig};

/// Squeezing diagnostics at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub t: f64,
    pub variance: f64,
    pub degree_db: f64,
    pub mean_phonon: f64,
    pub moment_bdbd: C64,
    /// Smallest variance over all angles and its squeezing degree.
    pub principal_variance: f64,
    pub principal_db: f64,
}

impl CurvePoint {
    fn new(t: f64, m: &crate::model::MomentVector, theta: f64) -> Result<Self> {
        let r = SqueezingReport::from_moments(m, theta)?;
        let (vmin, _) = principal_variance(&covariance_unchecked(m));
        Ok(CurvePoint {
            t,
            variance: r.variance,
            degree_db: r.degree_db,
            mean_phonon: r.mean_phonon,
            moment_bdbd: r.moment_bdbd,
            principal_variance: vmin,
            principal_db: squeezing_degree(vmin)?,
        })
    }
}

/// Squeezing along a moment trajectory, every `stride` grid points plus the
/// final point, with times shifted by `t0`.
pub fn squeezing_curve(mom: &MomentTrajectory, theta: f64, stride: usize, t0: f64) -> Result<Vec<CurvePoint>> {
    let stride = stride.max(1);
    let n = mom.moments.len();
    let mut out = Vec::with_capacity(n / stride + 2);
    for j in (0..n).step_by(stride) {
        out.push(CurvePoint::new(t0 + mom.grid.time(j), &mom.moments[j], theta)?);
    }
    if !(n - 1).is_multiple_of(stride) {
        out.push(CurvePoint::new(t0 + mom.grid.time(n - 1), &mom.moments[n - 1], theta)?);
    }
    Ok(out)
}

/// Forward run of a pulse with the curve sampled at the bin boundaries.
pub fn pulse_curve(pulse: &Pulse, p: &SystemParams, theta: f64, dt: f64) -> Result<Vec<CurvePoint>> {
    let (_, mom) = simulate(pulse, p, dt)?;
    squeezing_curve(&mom, theta, mom.grid.steps_per_bin, 0.0)
}

/// Final-time squeezing degree of a pulse.
pub fn final_degree(pulse: &Pulse, p: &SystemParams, theta: f64, dt: f64) -> Result<f64> {
    let (_, mom) = simulate(pulse, p, dt)?;
    Ok(SqueezingReport::from_moments(&mom.final_moments(), theta)?.degree_db)
}

/// One point of a sweep. Failures are recorded rather than aborting the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord<T> {
    pub key: String,
    pub value: f64,
    pub seed: u64,
    pub grad_mode: GradientMode,
    pub outcome: std::result::Result<T, String>,
    pub artifacts: Vec<String>,
}

impl<T> SweepRecord<T> {
    pub fn ok(&self) -> Option<&T> {
        self.outcome.as_ref().ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnglePoint {
    pub max_omega: f64,
    pub max_phi: f64,
    pub result: OptimizationResult,
}

/// Optimizes to the configured target at each angle and records the peak
/// drive amplitude and phase of the learned pulse.
pub fn angle_sweep(
    p: &SystemParams,
    cfg: &OptimizerConfig,
    thetas: &[f64],
    t_final: f64,
    n_bins: usize,
) -> Result<Vec<SweepRecord<AnglePoint>>> {
    for &th in thetas {
        if !(0.0..=std::f64::consts::PI).contains(&th) {
            return Err(Error::invalid("theta", format!("{th} is outside [0, pi]")));
        }
    }
    Ok(thetas
        .iter()
        .map(|&theta| {
            let cfg = OptimizerConfig { theta, ..cfg.clone() };
            let outcome = optimize(p, &cfg, t_final, n_bins)
                .map(|result| AnglePoint {
                    max_omega: result.pulse.max_abs_omega(),
                    max_phi: result.pulse.max_abs_phi(),
                    result,
                })
                .map_err(|e| e.to_string());
            SweepRecord {
                key: "theta".into(),
                value: theta,
                seed: cfg.seed,
                grad_mode: cfg.grad_mode,
                outcome,
                artifacts: Vec::new(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationPoint {
    pub eta: f64,
    /// Final squeezing with Ω scaled by 1 + η.
    pub amplitude_db: f64,
    /// Final squeezing with φ scaled by 1 + η.
    pub phase_db: f64,
}

/// Final squeezing of a pulse whose amplitude (or phase) is scaled uniformly
/// by 1 + η, without re-optimizing.
pub fn deviation_sweep(
    pulse: &Pulse,
    p: &SystemParams,
    theta: f64,
    etas: &[f64],
    dt: f64,
) -> Result<Vec<DeviationPoint>> {
    etas.iter()
        .map(|&eta| {
            let scaled = |v: &[f64]| v.iter().map(|x| x * (1.0 + eta)).collect::<Vec<_>>();
            let amp = Pulse::new(pulse.t_final, scaled(&pulse.omega), pulse.phi.clone())?;
            let phase = Pulse::new(pulse.t_final, pulse.omega.clone(), scaled(&pulse.phi))?;
            Ok(DeviationPoint {
                eta,
                amplitude_db: final_degree(&amp, p, theta, dt)?,
                phase_db: final_degree(&phase, p, theta, dt)?,
            })
        })
        .collect()
}

/// Evolution after the drive is switched off at the end of `pulse`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayRun {
    /// State at the switch-off time.
    pub start: CurvePoint,
    /// Samples on (T, t_end]; empty when t_end = T.
    pub tail: Vec<CurvePoint>,
}

impl DecayRun {
    pub fn last(&self) -> &CurvePoint {
        self.tail.last().unwrap_or(&self.start)
    }
}

/// Continues the mean fields and moments with zero drive from the end of the
/// pulse to `t_end`, sampling every `sample_dt`.
pub fn free_decay(
    pulse: &Pulse,
    p: &SystemParams,
    theta: f64,
    t_end: f64,
    dt: f64,
    sample_dt: f64,
) -> Result<DecayRun> {
    let t0 = pulse.t_final;
    if !(t_end >= t0) {
        return Err(Error::invalid("t_end", format!("must be >= the pulse length {t0}")));
    }
    let (mf, mom) = simulate(pulse, p, dt)?;
    let start = CurvePoint::new(t0, &mom.final_moments(), theta)?;
    if t_end == t0 {
        return Ok(DecayRun {
            start,
            tail: Vec::new(),
        });
    }
    let span = t_end - t0;
    let n_bins = ((span / sample_dt).round() as usize).max(2);
    let off = Pulse::zero(span, n_bins);
    let mf_tail = integrate_meanfield(&off, p, mf.final_state(), dt)?;
    let mom_tail = integrate_moments(&mf_tail, &mom.final_moments())?;
    let mut tail = squeezing_curve(&mom_tail, theta, mom_tail.grid.steps_per_bin, t0)?;
    tail.remove(0);
    Ok(DecayRun { start, tail })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    pub baseline: Vec<CurvePoint>,
    pub trials: Vec<Vec<CurvePoint>>,
    /// Pointwise mean of the trial squeezing degrees.
    pub mean_db: Vec<f64>,
}

impl NoiseReport {
    pub fn baseline_final_db(&self) -> f64 {
        self.baseline.last().map(|c| c.degree_db).unwrap_or(f64::NAN)
    }

    pub fn final_db(&self) -> Vec<f64> {
        self.trials
            .iter()
            .map(|c| c.last().map(|c| c.degree_db).unwrap_or(f64::NAN))
            .collect()
    }

    /// Mean of |S_b(T) − baseline| over the trials.
    pub fn mean_abs_deviation(&self) -> f64 {
        let base = self.baseline_final_db();
        let f = self.final_db();
        f.iter().map(|s| (s - base).abs()).sum::<f64>() / f.len() as f64
    }

    pub fn final_spread(&self) -> f64 {
        let f = self.final_db();
        let mean = f.iter().sum::<f64>() / f.len() as f64;
        f.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / f.len() as f64
    }
}

/// Adds independent zero-mean Gaussian noise to every bin of Ω (σ_Ω) and φ
/// (σ_φ) and re-simulates. Trial `k` draws from stream `k` of the seeded
/// generator.
#[allow(clippy::too_many_arguments)]
pub fn noise_trials(
    pulse: &Pulse,
    p: &SystemParams,
    theta: f64,
    sigma_omega: f64,
    sigma_phi: f64,
    n_trials: usize,
    seed: u64,
    dt: f64,
) -> Result<NoiseReport> {
    if n_trials < 1 {
        return Err(Error::invalid("trials", "must be >= 1"));
    }
    let noise =
        |sigma: f64, name: &'static str| Normal::new(0.0, sigma).map_err(|e| Error::invalid(name, e.to_string()));
    let d_omega = noise(sigma_omega, "sigma_omega")?;
    let d_phi = noise(sigma_phi, "sigma_phi")?;
    let baseline = pulse_curve(pulse, p, theta, dt)?;
    let mut trials = Vec::with_capacity(n_trials);
    for k in 0..n_trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let omega = pulse.omega.iter().map(|w| w + d_omega.sample(&mut rng)).collect();
        let phi = pulse.phi.iter().map(|f| f + d_phi.sample(&mut rng)).collect();
        trials.push(pulse_curve(&Pulse::new(pulse.t_final, omega, phi)?, p, theta, dt)?);
    }
    let mean_db = (0..baseline.len())
        .map(|i| trials.iter().map(|c| c[i].degree_db).sum::<f64>() / n_trials as f64)
        .collect();
    Ok(NoiseReport {
        baseline,
        trials,
        mean_db,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidebandPoint {
    pub result: OptimizationResult,
    pub curve: Vec<CurvePoint>,
}

/// Optimizes at each cavity linewidth and records the learned pulse with its
/// squeezing and phonon-number curves.
pub fn sideband_sweep(
    p: &SystemParams,
    cfg: &OptimizerConfig,
    kappas: &[f64],
    t_final: f64,
    n_bins: usize,
) -> Result<Vec<SweepRecord<SidebandPoint>>> {
    for &k in kappas {
        if !(k > 0.0) {
            return Err(Error::invalid("kappa", format!("{k} must be positive")));
        }
    }
    Ok(kappas
        .iter()
        .map(|&kappa| {
            let pk = SystemParams { kappa, ..*p };
            let outcome = optimize(&pk, cfg, t_final, n_bins)
                .and_then(|result| {
                    let curve = pulse_curve(&result.pulse, &pk, cfg.theta, cfg.dt)?;
                    Ok(SidebandPoint { result, curve })
                })
                .map_err(|e| e.to_string());
            SweepRecord {
                key: "kappa".into(),
                value: kappa,
                seed: cfg.seed,
                grad_mode: cfg.grad_mode,
                outcome,
                artifacts: Vec::new(),
            }
        })
        .collect())
}
