//! WebAssembly bindings for the browser demo in `www/`.
//!
//! [`Session`] holds the state of one interactive run and is plain Rust so
//! it can be tested natively; [`Demo`] is its JavaScript-facing wrapper.

use optosqueeze::analysis::{covariance_from_moments, wigner, SqueezingReport, WignerGrid};
use optosqueeze::optimizer::{random_smooth_pulse, Optimizer, OptimizerConfig, StepOutcome};
use optosqueeze::{Result, SystemParams};
use wasm_bindgen::prelude::*;

pub struct Session {
    theta: f64,
    optimizer: Optimizer,
    history: Vec<f64>,
    finished: Option<String>,
}

impl Session {
    pub fn new(
        kappa: f64,
        n_bar: f64,
        theta_deg: f64,
        t_final: f64,
        n_bins: usize,
        seed: u64,
        target_db: f64,
    ) -> Result<Session> {
        let p = SystemParams {
            kappa,
            n_bar_m: n_bar,
            ..SystemParams::default()
        };
        let cfg = OptimizerConfig {
            theta: theta_deg.to_radians(),
            target_db,
            seed,
            init_scale: 3e3,
            max_iters: 100_000,
            ..OptimizerConfig::default()
        };
        let pulse = random_smooth_pulse(&cfg, t_final, n_bins)?;
        let optimizer = Optimizer::new(&p, &cfg, pulse)?;
        let history = vec![optimizer.loss()];
        Ok(Session {
            theta: cfg.theta,
            optimizer,
            history,
            finished: None,
        })
    }

    /// Runs up to `n` iterations; returns true once the run has stopped.
    pub fn step(&mut self, n: usize) -> Result<bool> {
        for _ in 0..n {
            if self.finished.is_some() {
                break;
            }
            match self.optimizer.step()? {
                StepOutcome::Finished(status) => self.finished = Some(status.as_str().to_string()),
                StepOutcome::Improved { loss, .. } | StepOutcome::Exhausted { loss } => self.history.push(loss),
            }
        }
        Ok(self.finished.is_some())
    }

    pub fn status(&self) -> String {
        self.finished.clone().unwrap_or_else(|| "running".into())
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }

    pub fn loss(&self) -> f64 {
        self.optimizer.loss()
    }

    /// Flattened (t, S_b(θ), ⟨b†b⟩) triples at the bin boundaries of the
    /// current pulse, for any angle θ.
    pub fn curve(&self, theta_deg: f64) -> Result<Vec<f64>> {
        let (_, mom) = self.optimizer.trajectories();
        let theta = theta_deg.to_radians();
        let stride = mom.grid.steps_per_bin;
        let mut out = Vec::with_capacity(3 * (mom.grid.n_bins + 1));
        for j in (0..mom.moments.len()).step_by(stride) {
            let r = SqueezingReport::from_moments(&mom.moments[j], theta)?;
            out.extend([mom.grid.time(j), r.degree_db, r.mean_phonon]);
        }
        Ok(out)
    }

    /// Wigner function of the mechanics at a fraction of the pulse length,
    /// as `[extent, W(row 0) .., W(row n-1) ..]` on an n×n grid, rows over Re D.
    pub fn wigner(&self, fraction: f64, points: usize) -> Result<Vec<f64>> {
        let (_, mom) = self.optimizer.trajectories();
        let last = mom.moments.len() - 1;
        let j = ((fraction.clamp(0.0, 1.0) * last as f64).round() as usize).min(last);
        let v = covariance_from_moments(&mom.moments[j])?.mechanical();
        let grid = WignerGrid {
            n_re: points.max(2),
            n_im: points.max(2),
            ..WignerGrid::covering(&v)
        };
        let field = wigner(&v, &grid)?;
        let mut out = Vec::with_capacity(1 + grid.n_re * grid.n_im);
        out.push(grid.extent);
        for row in &field.values {
            out.extend_from_slice(row);
        }
        Ok(out)
    }

    pub fn theta_deg(&self) -> f64 {
        self.theta.to_degrees()
    }

    pub fn optimizer(&self) -> &Optimizer {
        &self.optimizer
    }
}

fn js(e: optosqueeze::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Demo {
    inner: Session,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(
        kappa: f64,
        n_bar: f64,
        theta_deg: f64,
        t_final: f64,
        n_bins: usize,
        seed: u32,
        target_db: f64,
    ) -> std::result::Result<Demo, JsError> {
        Session::new(kappa, n_bar, theta_deg, t_final, n_bins, seed as u64, target_db)
            .map(|inner| Demo { inner })
            .map_err(js)
    }

    pub fn step(&mut self, n: usize) -> std::result::Result<bool, JsError> {
        self.inner.step(n).map_err(js)
    }

    pub fn status(&self) -> String {
        self.inner.status()
    }

    pub fn iteration(&self) -> usize {
        self.inner.optimizer().iteration()
    }

    pub fn loss(&self) -> f64 {
        self.inner.loss()
    }

    pub fn history(&self) -> Vec<f64> {
        self.inner.history().to_vec()
    }

    pub fn times(&self) -> Vec<f64> {
        let p = self.inner.optimizer().pulse();
        (0..p.n_bins()).map(|k| p.bin_start(k)).collect()
    }

    pub fn omega(&self) -> Vec<f64> {
        self.inner.optimizer().pulse().omega.clone()
    }

    pub fn phi(&self) -> Vec<f64> {
        self.inner.optimizer().pulse().phi.clone()
    }

    pub fn curve(&self, theta_deg: f64) -> std::result::Result<Vec<f64>, JsError> {
        self.inner.curve(theta_deg).map_err(js)
    }

    pub fn wigner(&self, fraction: f64, points: usize) -> std::result::Result<Vec<f64>, JsError> {
        self.inner.wigner(fraction, points).map_err(js)
    }

    #[wasm_bindgen(getter)]
    pub fn theta_deg(&self) -> f64 {
        self.inner.theta_deg()
    }
}
