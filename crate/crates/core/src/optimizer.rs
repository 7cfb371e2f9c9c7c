//! Gradient descent on the per-bin drive amplitude and phase with an
//! adapt-with-revert learning rate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::analysis::{variance_for_degree, SqueezingReport};
use crate::dynamics::{simulate, MeanFieldTrajectory, MomentTrajectory, DEFAULT_DT};
use crate::error::{Error, Result};
use crate::gradient::{
    finite_difference_gradient, full_chain, paper_pointwise, ControlGradient, GradientMode, LossFunctional,
};
use crate::model::{Pulse, SystemParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    /// Squeezing angle of the target quadrature.
    pub theta: f64,
    /// Target squeezing degree in dB; the loss target is ½·10^{−S/10}.
    pub target_db: f64,
    pub max_iters: usize,
    /// Initial rate for the amplitude; `None` picks one from the first gradient.
    pub chi_omega: Option<f64>,
    /// Initial rate for the phase; `None` picks one from the first gradient.
    pub chi_phi: Option<f64>,
    pub grow: f64,
    pub shrink: f64,
    /// Rejected steps tolerated in a row before moving on with the current pulse.
    pub max_retries: usize,
    /// Consecutive iterations improving by less than `stall_tol` that stop the run.
    pub stall_window: usize,
    pub stall_tol: f64,
    pub seed: u64,
    /// Amplitude scale of the random initial pulse (units ωm).
    pub init_scale: f64,
    /// Number of Fourier modes in the random initial pulse.
    pub init_harmonics: usize,
    pub grad_mode: GradientMode,
    pub dt: f64,
    pub h_rel: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            theta: std::f64::consts::FRAC_PI_2,
            target_db: 1.0,
            max_iters: 10_000,
            chi_omega: None,
            chi_phi: None,
            grow: 1.05,
            shrink: 0.5,
            max_retries: 30,
            stall_window: 500,
            stall_tol: 1e-12,
            seed: 0,
            init_scale: 1e3,
            init_harmonics: 8,
            grad_mode: GradientMode::FullChain,
            dt: DEFAULT_DT,
            h_rel: 1e-4,
        }
    }
}

impl OptimizerConfig {
    pub fn epsilon(&self) -> f64 {
        variance_for_degree(self.target_db)
    }

    pub fn loss(&self) -> LossFunctional {
        LossFunctional::quadrature_variance(self.theta)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.target_db.is_finite() {
            return Err(Error::invalid("target_db", "must be finite"));
        }
        if !(self.grow > 1.0) {
            return Err(Error::invalid("grow", "must be > 1"));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::invalid("shrink", "must lie in (0, 1)"));
        }
        if self.max_iters < 1 {
            return Err(Error::invalid("max_iters", "must be >= 1"));
        }
        for (field, v) in [("chi_omega", self.chi_omega), ("chi_phi", self.chi_phi)] {
            if let Some(v) = v {
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(Error::invalid(field, "must be finite and >= 0"));
                }
            }
        }
        if !(self.init_scale >= 0.0) || !self.init_scale.is_finite() {
            return Err(Error::invalid("init_scale", "must be finite and >= 0"));
        }
        if self.init_harmonics < 1 {
            return Err(Error::invalid("init_harmonics", "must be >= 1"));
        }
        if !(self.dt > 0.0) {
            return Err(Error::invalid("dt", "must be > 0"));
        }
        Ok(())
    }
}

/// Random smooth initial pulse: a K-mode Fourier series with standard-normal
/// coefficients, rectified and scaled for the amplitude, unit-scaled for the
/// phase, sampled at bin centres.
pub fn random_smooth_pulse(cfg: &OptimizerConfig, t_final: f64, n_bins: usize) -> Result<Pulse> {
    let k_max = cfg.init_harmonics;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let coeffs = |rng: &mut ChaCha8Rng| -> Vec<(f64, f64)> {
        (0..k_max)
            .map(|_| (StandardNormal.sample(rng), StandardNormal.sample(rng)))
            .collect()
    };
    let amp = coeffs(&mut rng);
    let phase = coeffs(&mut rng);
    let norm = (k_max as f64).sqrt();
    let series = |c: &[(f64, f64)], t: f64| -> f64 {
        c.iter()
            .enumerate()
            .map(|(k, (a, b))| {
                let w = 2.0 * std::f64::consts::PI * (k + 1) as f64 * t / t_final;
                a * w.cos() + b * w.sin()
            })
            .sum::<f64>()
            / norm
    };
    let width = t_final / n_bins as f64;
    let centres: Vec<f64> = (0..n_bins).map(|k| (k as f64 + 0.5) * width).collect();
    Pulse::new(
        t_final,
        centres
            .iter()
            .map(|&t| cfg.init_scale * series(&amp, t).abs())
            .collect(),
        centres.iter().map(|&t| series(&phase, t)).collect(),
    )
}

/// `Q ← Q − χ_Q ∂L/∂Q` for both controls.
pub fn descent_step(pulse: &Pulse, grad: &ControlGradient, chi_omega: f64, chi_phi: f64) -> Pulse {
    assert_eq!(pulse.n_bins(), grad.d_omega.len());
    Pulse {
        t_final: pulse.t_final,
        omega: pulse
            .omega
            .iter()
            .zip(&grad.d_omega)
            .map(|(q, g)| q - chi_omega * g)
            .collect(),
        phi: pulse
            .phi
            .iter()
            .zip(&grad.d_phi)
            .map(|(q, g)| q - chi_phi * g)
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Converged,
    MaxIters,
    Stalled,
    Diverged,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Converged => "converged",
            Status::MaxIters => "max-iters",
            Status::Stalled => "stalled",
            Status::Diverged => "diverged",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub pulse: Pulse,
    /// Loss after each iteration; entry 0 is the initial pulse.
    pub loss_history: Vec<f64>,
    /// (χ_Ω, χ_φ) in effect after each iteration.
    pub rate_history: Vec<(f64, f64)>,
    pub best_loss: f64,
    pub best_iteration: usize,
    pub final_report: SqueezingReport,
    pub seed: u64,
    pub grad_mode: GradientMode,
    pub status: Status,
    pub wall_time: f64,
}

impl OptimizationResult {
    pub fn iterations(&self) -> usize {
        self.loss_history.len() - 1
    }

    /// First iteration at which the loss reached `target`.
    pub fn first_below(&self, target: f64) -> Option<usize> {
        self.loss_history.iter().position(|&l| l <= target)
    }
}

/// Outcome of one [`Optimizer::step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    /// The loss went down after `retries` rejected trial steps.
    Improved {
        loss: f64,
        retries: usize,
    },
    /// Every trial step was rejected; the pulse is unchanged.
    Exhausted {
        loss: f64,
    },
    Finished(Status),
}

struct Evaluation {
    loss: f64,
    mf: MeanFieldTrajectory,
    mom: MomentTrajectory,
}

/// Wall-clock timer. Reads zero on targets without a clock (wasm32).
#[derive(Debug, Clone, Copy)]
struct Stopwatch {
    #[cfg(not(target_arch = "wasm32"))]
    start: std::time::Instant,
}

impl Stopwatch {
    fn start() -> Self {
        Stopwatch {
            #[cfg(not(target_arch = "wasm32"))]
            start: std::time::Instant::now(),
        }
    }

    #[cfg(not(target_arch = "wasm32"))]
    fn seconds(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    #[cfg(target_arch = "wasm32")]
    fn seconds(&self) -> f64 {
        0.0
    }
}

/// Stateful descent loop, one accepted (or exhausted) step per call.
pub struct Optimizer {
    params: SystemParams,
    cfg: OptimizerConfig,
    loss_fn: LossFunctional,
    pulse: Pulse,
    current: Evaluation,
    grad: ControlGradient,
    chi_omega: f64,
    chi_phi: f64,
    initial_loss: f64,
    history: Vec<f64>,
    rates: Vec<(f64, f64)>,
    stall: usize,
    status: Option<Status>,
    started: Stopwatch,
}

impl Optimizer {
    pub fn new(p: &SystemParams, cfg: &OptimizerConfig, pulse: Pulse) -> Result<Self> {
        p.validate()?;
        cfg.validate()?;
        let loss_fn = cfg.loss();
        let current = evaluate(&pulse, p, &loss_fn, cfg.dt)?;
        let grad = gradient(&pulse, p, &loss_fn, &current, cfg)?;
        let max_abs = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let pick = |given: Option<f64>, g: &[f64], step: f64| {
            given.unwrap_or_else(|| {
                let m = max_abs(g);
                if m > 0.0 {
                    step / m
                } else {
                    0.0
                }
            })
        };
        // Default rates move the largest bin by 5% of the initial amplitude
        // scale and by 0.05 rad on the first step.
        let chi_omega = pick(cfg.chi_omega, &grad.d_omega, 0.05 * cfg.init_scale.max(1.0));
        let chi_phi = pick(cfg.chi_phi, &grad.d_phi, 0.05);
        let initial_loss = current.loss;
        Ok(Optimizer {
            params: *p,
            cfg: cfg.clone(),
            loss_fn,
            pulse,
            grad,
            chi_omega,
            chi_phi,
            initial_loss,
            history: vec![initial_loss],
            rates: vec![(chi_omega, chi_phi)],
            stall: 0,
            status: None,
            current,
            started: Stopwatch::start(),
        })
    }

    pub fn loss(&self) -> f64 {
        self.current.loss
    }

    pub fn pulse(&self) -> &Pulse {
        &self.pulse
    }

    pub fn iteration(&self) -> usize {
        self.history.len() - 1
    }

    pub fn rates(&self) -> (f64, f64) {
        (self.chi_omega, self.chi_phi)
    }

    pub fn status(&self) -> Option<Status> {
        self.status
    }

    pub fn trajectories(&self) -> (&MeanFieldTrajectory, &MomentTrajectory) {
        (&self.current.mf, &self.current.mom)
    }

    fn check_stop(&mut self) -> Option<Status> {
        if self.status.is_none() {
            if self.current.loss <= self.cfg.epsilon() {
                self.status = Some(Status::Converged);
            } else if self.current.loss > 1e6 * self.initial_loss {
                self.status = Some(Status::Diverged);
            } else if self.stall >= self.cfg.stall_window {
                self.status = Some(Status::Stalled);
            } else if self.iteration() >= self.cfg.max_iters {
                self.status = Some(Status::MaxIters);
            }
        }
        self.status
    }

    pub fn step(&mut self) -> Result<StepOutcome> {
        if let Some(s) = self.check_stop() {
            return Ok(StepOutcome::Finished(s));
        }
        if self.grad.flat().iter().all(|g| *g == 0.0) {
            // No descent direction at all: nothing a step size can fix.
            self.status = Some(Status::Stalled);
            return Ok(StepOutcome::Finished(Status::Stalled));
        }
        let before = self.current.loss;
        let mut outcome = StepOutcome::Exhausted { loss: before };
        for retries in 0..=self.cfg.max_retries {
            let trial = descent_step(&self.pulse, &self.grad, self.chi_omega, self.chi_phi);
            let accepted = match evaluate(&trial, &self.params, &self.loss_fn, self.cfg.dt) {
                Ok(eval) if eval.loss < before => Some(eval),
                Ok(_) => None,
                Err(e) if e.is_numeric() => None,
                Err(e) => return Err(e),
            };
            match accepted {
                Some(eval) => {
                    self.grad = gradient(&trial, &self.params, &self.loss_fn, &eval, &self.cfg)?;
                    self.pulse = trial;
                    self.current = eval;
                    self.chi_omega *= self.cfg.grow;
                    self.chi_phi *= self.cfg.grow;
                    outcome = StepOutcome::Improved {
                        loss: self.current.loss,
                        retries,
                    };
                    break;
                }
                None => {
                    self.chi_omega *= self.cfg.shrink;
                    self.chi_phi *= self.cfg.shrink;
                }
            }
        }
        if before - self.current.loss < self.cfg.stall_tol {
            self.stall += 1;
        } else {
            self.stall = 0;
        }
        self.history.push(self.current.loss);
        self.rates.push((self.chi_omega, self.chi_phi));
        self.check_stop();
        Ok(outcome)
    }

    pub fn run(mut self) -> Result<OptimizationResult> {
        loop {
            if let StepOutcome::Finished(_) = self.step()? {
                break;
            }
            let it = self.iteration();
            if it.is_multiple_of(500) {
                log::info!(
                    "iteration {it}: loss {:.6} (S = {:.3} dB)",
                    self.current.loss,
                    -10.0 * (self.current.loss / 0.5).log10()
                );
            }
        }
        self.finish()
    }

    pub fn finish(self) -> Result<OptimizationResult> {
        let (best_iteration, best_loss) = self
            .history
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::INFINITY), |b, (i, l)| if l < b.1 { (i, l) } else { b });
        let final_report = SqueezingReport::from_moments(&self.current.mom.final_moments(), self.cfg.theta)?;
        Ok(OptimizationResult {
            pulse: self.pulse,
            loss_history: self.history,
            rate_history: self.rates,
            best_loss,
            best_iteration,
            final_report,
            seed: self.cfg.seed,
            grad_mode: self.cfg.grad_mode,
            status: self.status.unwrap_or(Status::MaxIters),
            wall_time: self.started.seconds(),
        })
    }
}

fn evaluate(pulse: &Pulse, p: &SystemParams, loss: &LossFunctional, dt: f64) -> Result<Evaluation> {
    let (mf, mom) = simulate(pulse, p, dt)?;
    let value = loss.value(&mom.final_moments());
    if !value.is_finite() {
        return Err(Error::Domain(format!("loss evaluated to {value}")));
    }
    Ok(Evaluation { loss: value, mf, mom })
}

fn gradient(
    pulse: &Pulse,
    p: &SystemParams,
    loss: &LossFunctional,
    eval: &Evaluation,
    cfg: &OptimizerConfig,
) -> Result<ControlGradient> {
    match cfg.grad_mode {
        GradientMode::FullChain => full_chain(&eval.mf, &eval.mom, loss),
        GradientMode::PaperPointwise => paper_pointwise(&eval.mf, &eval.mom, loss),
        GradientMode::FiniteDifference => finite_difference_gradient(pulse, p, loss, cfg.h_rel, cfg.dt),
    }
}

/// Runs the optimizer from the seeded random initial pulse.
pub fn optimize(p: &SystemParams, cfg: &OptimizerConfig, t_final: f64, n_bins: usize) -> Result<OptimizationResult> {
    let pulse = random_smooth_pulse(cfg, t_final, n_bins)?;
    Optimizer::new(p, cfg, pulse)?.run()
}

/// Runs from an explicit initial pulse.
pub fn optimize_from(p: &SystemParams, cfg: &OptimizerConfig, pulse: Pulse) -> Result<OptimizationResult> {
    Optimizer::new(p, cfg, pulse)?.run()
}

/// Independent runs over several seeds, spread over the available cores.
pub fn optimize_batch(
    p: &SystemParams,
    cfg: &OptimizerConfig,
    seeds: &[u64],
    t_final: f64,
    n_bins: usize,
) -> Vec<Result<OptimizationResult>> {
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(seeds.len().max(1));
    let mut out: Vec<Option<Result<OptimizationResult>>> = (0..seeds.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunks: Vec<Vec<(usize, u64)>> = (0..workers)
            .map(|w| seeds.iter().copied().enumerate().skip(w).step_by(workers).collect())
            .collect();
        let handles: Vec<_> = chunks
            .into_iter()
            .map(|chunk| {
                scope.spawn(move || {
                    chunk
                        .into_iter()
                        .map(|(i, seed)| {
                            let cfg = OptimizerConfig { seed, ..cfg.clone() };
                            (i, optimize(p, &cfg, t_final, n_bins))
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("optimizer worker panicked") {
                out[i] = Some(r);
            }
        }
    });
    out.into_iter().map(|r| r.expect("every seed ran")).collect()
}
