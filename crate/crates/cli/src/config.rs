use std::path::Path;

use optosqueeze::gradient::GradientMode;
use optosqueeze::optimizer::OptimizerConfig;
use optosqueeze::oracle::FockConfig;
use optosqueeze::SystemParams;
use serde::{Deserialize, Serialize};

use crate::failure::Failure;

/// Flat run configuration. Keys mirror the library's parameter and optimizer
/// field names; unknown keys are rejected so typos do not go unnoticed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub omega_m: f64,
    pub g0: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub delta_c: f64,
    pub n_bar_m: f64,

    pub theta: f64,
    pub target_db: f64,
    pub max_iters: usize,
    pub chi_omega: Option<f64>,
    pub chi_phi: Option<f64>,
    pub grow: f64,
    pub shrink: f64,
    pub max_retries: usize,
    pub stall_window: usize,
    pub stall_tol: f64,
    pub seed: u64,
    pub init_scale: f64,
    pub init_harmonics: usize,
    pub grad_mode: GradientMode,
    pub dt: f64,
    pub h_rel: f64,

    pub t_final: f64,
    pub n_bins: usize,

    /// Angles for `sweep angle`, in degrees.
    pub sweep_thetas_deg: Vec<f64>,
    pub sweep_kappas: Vec<f64>,
    pub sweep_etas: Vec<f64>,
    pub trials: usize,
    pub sigma_omega: f64,
    pub sigma_phi: f64,
    pub t_end: f64,
    /// Sampling interval of emitted curves past the pulse.
    pub sample_dt: f64,

    pub dim_a: usize,
    pub dim_b: usize,
    pub oracle_n_bar: f64,
    pub oracle_t_final: f64,
    pub oracle_bins: usize,
    pub oracle_tolerance: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = SystemParams::default();
        let o = OptimizerConfig::default();
        let f = FockConfig::default();
        RunConfig {
            omega_m: p.omega_m,
            g0: p.g0,
            kappa: p.kappa,
            gamma: p.gamma,
            delta_c: p.delta_c,
            n_bar_m: p.n_bar_m,
            theta: o.theta,
            target_db: o.target_db,
            max_iters: o.max_iters,
            chi_omega: o.chi_omega,
            chi_phi: o.chi_phi,
            grow: o.grow,
            shrink: o.shrink,
            max_retries: o.max_retries,
            stall_window: o.stall_window,
            stall_tol: o.stall_tol,
            seed: o.seed,
            init_scale: o.init_scale,
            init_harmonics: o.init_harmonics,
            grad_mode: o.grad_mode,
            dt: o.dt,
            h_rel: o.h_rel,
            t_final: 120.0,
            n_bins: 2400,
            sweep_thetas_deg: vec![0.0, 45.0, 90.0, 135.0],
            sweep_kappas: vec![0.5, 1.0, 1.5],
            sweep_etas: (-5..=5).map(|k| 0.02 * k as f64).collect(),
            trials: 10,
            sigma_omega: 200.0,
            sigma_phi: 0.0,
            t_end: 300.0,
            sample_dt: 0.5,
            dim_a: f.dim_a,
            dim_b: f.dim_b,
            oracle_n_bar: 0.2,
            oracle_t_final: 10.0,
            oracle_bins: 20,
            oracle_tolerance: 0.02,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig, Failure> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("cannot read {}: {e}", path.display())))?;
        RunConfig::parse(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<RunConfig, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn params(&self) -> Result<SystemParams, Failure> {
        let p = SystemParams {
            omega_m: self.omega_m,
            g0: self.g0,
            kappa: self.kappa,
            gamma: self.gamma,
            delta_c: self.delta_c,
            n_bar_m: self.n_bar_m,
        };
        p.validate().map_err(Failure::from)?;
        Ok(p)
    }

    pub fn optimizer(&self) -> Result<OptimizerConfig, Failure> {
        let o = OptimizerConfig {
            theta: self.theta,
            target_db: self.target_db,
            max_iters: self.max_iters,
            chi_omega: self.chi_omega,
            chi_phi: self.chi_phi,
            grow: self.grow,
            shrink: self.shrink,
            max_retries: self.max_retries,
            stall_window: self.stall_window,
            stall_tol: self.stall_tol,
            seed: self.seed,
            init_scale: self.init_scale,
            init_harmonics: self.init_harmonics,
            grad_mode: self.grad_mode,
            dt: self.dt,
            h_rel: self.h_rel,
        };
        o.validate().map_err(Failure::from)?;
        Ok(o)
    }

    pub fn fock(&self) -> Result<FockConfig, Failure> {
        let f = FockConfig {
            dim_a: self.dim_a,
            dim_b: self.dim_b,
            include_nonlinear: false,
            dt: self.dt,
        };
        f.validate().map_err(Failure::from)?;
        Ok(f)
    }

    pub fn check_grid(&self) -> Result<(), Failure> {
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(Failure::config("t_final must be positive"));
        }
        if self.n_bins < 2 {
            return Err(Failure::config("n_bins must be >= 2"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
