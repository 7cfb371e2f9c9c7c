use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use optosqueeze::analysis::{covariance_from_moments, squeezing_degree, wigner, WignerGrid};
use optosqueeze::dynamics::{integrate_meanfield, integrate_moments, simulate};
use optosqueeze::experiments::{
    angle_sweep, deviation_sweep, free_decay, noise_trials, pulse_curve, sideband_sweep, CurvePoint,
};
use optosqueeze::gradient::{
    cosine_similarity, finite_difference_gradient_with, loss_gradient, max_relative_error, ControlGradient,
    GradientMode, GradientSettings, LossFunctional, Stencil,
};
use optosqueeze::io::{
    conform_pulse, gradient_from_table, gradient_table, loss_history_table, pulse_table, read_pulse, squeezing_table,
    trajectory_table, wigner_table, RunResult, Table,
};
use optosqueeze::model::thermal_moments;
use optosqueeze::optimizer::{optimize, random_smooth_pulse, OptimizationResult, OptimizerConfig, Status};
use optosqueeze::oracle::{fock_reference_moments, moment_deviation};
use optosqueeze::{MeanFieldState, Pulse, SystemParams};

use crate::config::RunConfig;
use crate::failure::Failure;
use crate::output::RunDir;
use crate::{Command, Common, SweepKind};

pub fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Optimize {
            common,
            grad_mode,
            target_db,
            t_final,
            bins,
        } => {
            let mut cfg = load(&common)?;
            if let Some(m) = grad_mode {
                cfg.grad_mode = m;
            }
            if let Some(x) = target_db {
                cfg.target_db = x;
            }
            if let Some(x) = t_final {
                cfg.t_final = x;
            }
            if let Some(x) = bins {
                cfg.n_bins = x;
            }
            cmd_optimize(&common, &cfg)
        }
        Command::Simulate { common, pulse, stride } => cmd_simulate(&common, &pulse, stride),
        Command::GradCheck {
            common,
            bins,
            t_final,
            pulse,
            gradient,
            h_rel,
            tolerance,
        } => cmd_grad_check(
            &common,
            bins,
            t_final,
            pulse.as_deref(),
            gradient.as_deref(),
            h_rel,
            tolerance,
        ),
        Command::Sweep { kind, common, pulse } => cmd_sweep(kind, &common, pulse.as_deref()),
        Command::Decay { common, pulse, t_end } => cmd_decay(&common, &pulse, t_end),
        Command::Noise {
            common,
            pulse,
            sigma_omega,
            sigma_phi,
            trials,
        } => cmd_noise(&common, &pulse, sigma_omega, sigma_phi, trials),
        Command::Wigner {
            common,
            pulse,
            at_time,
            points,
        } => cmd_wigner(&common, &pulse, at_time, points),
        Command::OracleCheck { common, pulse } => cmd_oracle(&common, pulse.as_deref()),
    }
}

fn load(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn out_dir(common: &Common, default: impl AsRef<Path>) -> PathBuf {
    common.out.clone().unwrap_or_else(|| Path::new("runs").join(default))
}

/// Loads a pulse. With a config file the pulse is brought onto the
/// configured grid; otherwise it keeps its own.
fn load_pulse(path: &Path, common: &Common, cfg: &RunConfig) -> Result<Pulse, Failure> {
    let pulse = read_pulse(path, None).map_err(|e| Failure::from(e).context(&path.display().to_string()))?;
    if common.config.is_none() {
        return Ok(pulse);
    }
    cfg.check_grid()?;
    let (pulse, warning) = conform_pulse(pulse, cfg.t_final, cfg.n_bins)?;
    if let Some(w) = warning {
        eprintln!("warning: {w}");
    }
    Ok(pulse)
}

fn write_optimization(
    dir: &mut RunDir,
    prefix: &str,
    p: &SystemParams,
    cfg: &RunConfig,
    ocfg: &OptimizerConfig,
    r: &OptimizationResult,
) -> Result<Vec<CurvePoint>, Failure> {
    dir.table(&format!("{prefix}pulse.csv"), &pulse_table(&r.pulse))?;
    dir.table(&format!("{prefix}loss_history.csv"), &loss_history_table(r))?;
    let curve = pulse_curve(&r.pulse, p, ocfg.theta, ocfg.dt)?;
    dir.table(&format!("{prefix}squeezing.csv"), &squeezing_table(&curve))?;
    let result = RunResult {
        params: *p,
        config: cfg.to_json(),
        seed: r.seed,
        grad_mode: r.grad_mode,
        best_loss: r.best_loss,
        best_db: squeezing_degree(r.best_loss)?,
        iterations: r.iterations(),
        wall_time: r.wall_time,
        status: r.status.as_str().to_string(),
        final_mean_phonon: r.final_report.mean_phonon,
    };
    dir.json(&format!("{prefix}result.json"), &result)?;
    Ok(curve)
}

fn cmd_optimize(common: &Common, cfg: &RunConfig) -> Result<(), Failure> {
    let p = cfg.params()?;
    let ocfg = cfg.optimizer()?;
    cfg.check_grid()?;
    let mut dir = RunDir::create(
        &out_dir(common, format!("optimize/seed-{}", cfg.seed)),
        "optimize",
        cfg.to_json(),
        Some(cfg.seed),
    )?;
    let r = optimize(&p, &ocfg, cfg.t_final, cfg.n_bins)?;
    write_optimization(&mut dir, "", &p, cfg, &ocfg, &r)?;
    println!(
        "status {} after {} iterations: best S_b = {:.4} dB (loss {:.6}), <b+b>(T) = {:.3}, {:.1} s",
        r.status.as_str(),
        r.iterations(),
        squeezing_degree(r.best_loss)?,
        r.best_loss,
        r.final_report.mean_phonon,
        r.wall_time
    );
    if r.status != Status::Converged {
        log::warn!("target {} dB not reached", cfg.target_db);
    }
    println!("wrote {}", dir.finish()?.display());
    Ok(())
}

fn cmd_simulate(common: &Common, pulse_path: &Path, stride: Option<usize>) -> Result<(), Failure> {
    let cfg = load(common)?;
    let p = cfg.params()?;
    let pulse = load_pulse(pulse_path, common, &cfg)?;
    let (mf, mom) = simulate(&pulse, &p, cfg.dt)?;
    let stride = stride.unwrap_or(mom.grid.steps_per_bin);
    let mut dir = RunDir::create(&out_dir(common, "simulate"), "simulate", cfg.to_json(), None)?;
    dir.table("trajectory.csv", &trajectory_table(&mf, &mom, stride))?;
    let curve = optosqueeze::experiments::squeezing_curve(&mom, cfg.theta, stride, 0.0)?;
    dir.table("squeezing.csv", &squeezing_table(&curve))?;
    let last = curve.last().expect("non-empty curve");
    println!(
        "S_b(T) = {:.4} dB, <b+b>(T) = {:.3}, max |G| = {:.4}",
        last.degree_db,
        last.mean_phonon,
        mf.max_abs_coupling()
    );
    println!("wrote {}", dir.finish()?.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_grad_check(
    common: &Common,
    bins: usize,
    t_final: f64,
    pulse_path: Option<&Path>,
    gradient_path: Option<&Path>,
    h_rel: f64,
    tolerance: f64,
) -> Result<(), Failure> {
    let cfg = load(common)?;
    let p = cfg.params()?;
    let ocfg = cfg.optimizer()?;
    let pulse = match pulse_path {
        Some(path) => load_pulse(path, common, &cfg)?,
        None => random_smooth_pulse(&ocfg, t_final, bins)?,
    };
    let loss = LossFunctional::quadrature_variance(cfg.theta);
    let settings = GradientSettings { dt: cfg.dt, h_rel };
    let fd = finite_difference_gradient_with(&pulse, &p, &loss, h_rel, cfg.dt, Stencil::Central5)?;
    let full = loss_gradient(&pulse, &p, &loss, GradientMode::FullChain, &settings)?;
    let paper = loss_gradient(&pulse, &p, &loss, GradientMode::PaperPointwise, &settings)?;
    let report = |name: &str, g: &ControlGradient| {
        let err = max_relative_error(g, &fd, 1e-12);
        println!(
            "{name:<16} max relative error {err:.3e}  cosine similarity {:.9}",
            cosine_similarity(g, &fd)
        );
        err
    };
    println!("{} bins over T = {}", pulse.n_bins(), pulse.t_final);
    let full_err = report("full-chain", &full);
    report("paper-pointwise", &paper);
    let mut dumped_err = None;
    if let Some(path) = gradient_path {
        let g = gradient_from_table(&Table::read(path)?, GradientMode::FullChain)?;
        if g.d_omega.len() != pulse.n_bins() {
            return Err(Failure::config(format!(
                "{} has {} bins, pulse has {}",
                path.display(),
                g.d_omega.len(),
                pulse.n_bins()
            )));
        }
        dumped_err = Some(report(&path.display().to_string(), &g));
    }
    if common.out.is_some() {
        let mut dir = RunDir::create(
            &out_dir(common, "grad-check"),
            "grad-check",
            cfg.to_json(),
            Some(cfg.seed),
        )?;
        dir.table("pulse.csv", &pulse_table(&pulse))?;
        dir.table("gradient_full_chain.csv", &gradient_table(&pulse, &full))?;
        dir.table("gradient_paper_pointwise.csv", &gradient_table(&pulse, &paper))?;
        dir.table("gradient_finite_difference.csv", &gradient_table(&pulse, &fd))?;
        println!("wrote {}", dir.finish()?.display());
    }
    if full_err > tolerance {
        return Err(Failure::acceptance(format!(
            "full-chain gradient error {full_err:.3e} exceeds {tolerance:.1e}"
        )));
    }
    if let Some(err) = dumped_err.filter(|e| *e > tolerance) {
        return Err(Failure::acceptance(format!(
            "dumped gradient error {err:.3e} exceeds {tolerance:.1e}"
        )));
    }
    Ok(())
}

fn num(x: Option<f64>) -> f64 {
    x.unwrap_or(f64::NAN)
}

fn cmd_sweep(kind: SweepKind, common: &Common, pulse_path: Option<&Path>) -> Result<(), Failure> {
    let cfg = load(common)?;
    let p = cfg.params()?;
    let ocfg = cfg.optimizer()?;
    cfg.check_grid()?;
    let name = match kind {
        SweepKind::Angle => "sweep-angle",
        SweepKind::Kappa => "sweep-kappa",
        SweepKind::Eta => "sweep-eta",
    };
    let mut dir = RunDir::create(&out_dir(common, name), name, cfg.to_json(), Some(cfg.seed))?;
    match kind {
        SweepKind::Angle => {
            let thetas: Vec<f64> = cfg.sweep_thetas_deg.iter().map(|d| d.to_radians()).collect();
            if thetas.iter().any(|t| !(0.0..=PI).contains(t)) {
                return Err(Failure::config("sweep_thetas_deg must lie in [0, 180]"));
            }
            let records = angle_sweep(&p, &ocfg, &thetas, cfg.t_final, cfg.n_bins)?;
            let mut summary = Table::new([
                "theta_deg",
                "max_omega",
                "max_phi",
                "best_db",
                "iterations",
                "converged",
            ]);
            for rec in &records {
                let deg = rec.value.to_degrees();
                let row = match &rec.outcome {
                    Ok(pt) => {
                        let ocfg = OptimizerConfig {
                            theta: rec.value,
                            ..ocfg.clone()
                        };
                        write_optimization(&mut dir, &format!("theta-{deg:06.2}/"), &p, &cfg, &ocfg, &pt.result)?;
                        println!(
                            "theta {deg:6.2} deg: max|Omega| = {:.1}, max|phi| = {:.3}, {} after {} iterations",
                            pt.max_omega,
                            pt.max_phi,
                            pt.result.status.as_str(),
                            pt.result.iterations()
                        );
                        sweep_row(deg, Some(pt.max_omega), Some(pt.max_phi), &pt.result)
                    }
                    Err(e) => failed_point(deg, e, 6),
                };
                summary.push(row);
            }
            dir.table("summary.csv", &summary)?;
        }
        SweepKind::Kappa => {
            let records = sideband_sweep(&p, &ocfg, &cfg.sweep_kappas, cfg.t_final, cfg.n_bins)?;
            let mut summary = Table::new([
                "kappa",
                "max_omega",
                "best_db",
                "final_phonon",
                "iterations",
                "converged",
            ]);
            for rec in &records {
                let row = match &rec.outcome {
                    Ok(pt) => {
                        let pk = SystemParams { kappa: rec.value, ..p };
                        write_optimization(
                            &mut dir,
                            &format!("kappa-{:.3}/", rec.value),
                            &pk,
                            &cfg,
                            &ocfg,
                            &pt.result,
                        )?;
                        let r = &pt.result;
                        println!(
                            "kappa {:.3}: max|Omega| = {:.1}, S_b = {:.3} dB, <b+b>(T) = {:.3}",
                            rec.value,
                            r.pulse.max_abs_omega(),
                            squeezing_degree(r.best_loss)?,
                            r.final_report.mean_phonon
                        );
                        vec![
                            rec.value,
                            r.pulse.max_abs_omega(),
                            squeezing_degree(r.best_loss)?,
                            r.final_report.mean_phonon,
                            r.iterations() as f64,
                            (r.status == Status::Converged) as u8 as f64,
                        ]
                    }
                    Err(e) => failed_point(rec.value, e, 6),
                };
                summary.push(row);
            }
            dir.table("summary.csv", &summary)?;
        }
        SweepKind::Eta => {
            let path = pulse_path.ok_or_else(|| Failure::config("sweep eta needs --pulse"))?;
            if cfg.sweep_etas.iter().any(|e| !(-0.5..=0.5).contains(e)) {
                return Err(Failure::config("sweep_etas must lie in [-0.5, 0.5]"));
            }
            let pulse = load_pulse(path, common, &cfg)?;
            let points = deviation_sweep(&pulse, &p, cfg.theta, &cfg.sweep_etas, cfg.dt)?;
            let mut summary = Table::new(["eta", "amplitude_S_b", "phase_S_b"]);
            for pt in &points {
                let scaled = |v: &[f64]| v.iter().map(|x| x * (1.0 + pt.eta)).collect::<Vec<_>>();
                let amp = Pulse::new(pulse.t_final, scaled(&pulse.omega), pulse.phi.clone())?;
                let phase = Pulse::new(pulse.t_final, pulse.omega.clone(), scaled(&pulse.phi))?;
                let sub = format!("eta-{:+.3}", pt.eta);
                dir.table(
                    &format!("{sub}/amplitude.csv"),
                    &squeezing_table(&pulse_curve(&amp, &p, cfg.theta, cfg.dt)?),
                )?;
                dir.table(
                    &format!("{sub}/phase.csv"),
                    &squeezing_table(&pulse_curve(&phase, &p, cfg.theta, cfg.dt)?),
                )?;
                println!(
                    "eta {:+.3}: amplitude-scaled S_b = {:.4} dB, phase-scaled S_b = {:.4} dB",
                    pt.eta, pt.amplitude_db, pt.phase_db
                );
                summary.push(vec![pt.eta, pt.amplitude_db, pt.phase_db]);
            }
            dir.table("summary.csv", &summary)?;
        }
    }
    println!("wrote {}", dir.finish()?.display());
    Ok(())
}

fn sweep_row(key: f64, max_omega: Option<f64>, max_phi: Option<f64>, r: &OptimizationResult) -> Vec<f64> {
    vec![
        key,
        num(max_omega),
        num(max_phi),
        squeezing_degree(r.best_loss).unwrap_or(f64::NAN),
        r.iterations() as f64,
        (r.status == Status::Converged) as u8 as f64,
    ]
}

fn failed_point(key: f64, err: &str, width: usize) -> Vec<f64> {
    eprintln!("warning: sweep point {key} failed: {err}");
    let mut row = vec![f64::NAN; width];
    row[0] = key;
    row
}

fn curve_table(curve: &[CurvePoint]) -> Table {
    let mut t = Table::new(["t", "variance", "S_b", "principal_variance", "principal_S_b", "bdb"]);
    for c in curve {
        t.push(vec![
            c.t,
            c.variance,
            c.degree_db,
            c.principal_variance,
            c.principal_db,
            c.mean_phonon,
        ]);
    }
    t
}

fn cmd_decay(common: &Common, pulse_path: &Path, t_end: Option<f64>) -> Result<(), Failure> {
    let cfg = load(common)?;
    let p = cfg.params()?;
    let pulse = load_pulse(pulse_path, common, &cfg)?;
    let t_end = t_end.unwrap_or(cfg.t_end);
    if !(t_end >= pulse.t_final) {
        return Err(Failure::config(format!(
            "t_end {t_end} precedes the pulse end {}",
            pulse.t_final
        )));
    }
    let run = free_decay(&pulse, &p, cfg.theta, t_end, cfg.dt, cfg.sample_dt)?;
    let mut curve = vec![run.start];
    curve.extend(run.tail.iter().copied());
    let mut dir = RunDir::create(&out_dir(common, "decay"), "decay", cfg.to_json(), None)?;
    dir.table("decay.csv", &curve_table(&curve))?;
    let (a, b) = (&run.start, run.last());
    println!(
        "t = {:.1}: S_b = {:.4} dB (best angle {:.4} dB); t = {:.1}: S_b = {:.4} dB (best angle {:.4} dB)",
        a.t, a.degree_db, a.principal_db, b.t, b.degree_db, b.principal_db
    );
    println!("wrote {}", dir.finish()?.display());
    Ok(())
}

fn cmd_noise(
    common: &Common,
    pulse_path: &Path,
    sigma_omega: Option<f64>,
    sigma_phi: Option<f64>,
    trials: Option<usize>,
) -> Result<(), Failure> {
    let cfg = load(common)?;
    let p = cfg.params()?;
    let pulse = load_pulse(pulse_path, common, &cfg)?;
    let (so, sp) = (
        sigma_omega.unwrap_or(cfg.sigma_omega),
        sigma_phi.unwrap_or(cfg.sigma_phi),
    );
    let n = trials.unwrap_or(cfg.trials);
    if n < 1 || !(so >= 0.0) || !(sp >= 0.0) {
        return Err(Failure::config("need trials >= 1 and non-negative noise levels"));
    }
    let report = noise_trials(&pulse, &p, cfg.theta, so, sp, n, cfg.seed, cfg.dt)?;
    let mut dir = RunDir::create(&out_dir(common, "noise"), "noise", cfg.to_json(), Some(cfg.seed))?;
    dir.table("baseline.csv", &squeezing_table(&report.baseline))?;
    for (k, trial) in report.trials.iter().enumerate() {
        dir.table(&format!("trial-{k:03}.csv"), &squeezing_table(trial))?;
    }
    let mut mean = Table::new(["t", "mean_S_b"]);
    for (c, m) in report.baseline.iter().zip(&report.mean_db) {
        mean.push(vec![c.t, *m]);
    }
    dir.table("mean.csv", &mean)?;
    let base = report.baseline_final_db();
    let mut summary = Table::new(["trial", "S_b", "deviation"]);
    for (k, s) in report.final_db().iter().enumerate() {
        summary.push(vec![k as f64, *s, s - base]);
    }
    dir.table("summary.csv", &summary)?;
    println!(
        "baseline S_b(T) = {:.4} dB; {} trials with sigma_omega = {so}, sigma_phi = {sp}: mean |dS_b| = {:.4} dB",
        base,
        n,
        report.mean_abs_deviation()
    );
    println!("wrote {}", dir.finish()?.display());
    Ok(())
}

fn cmd_wigner(common: &Common, pulse_path: &Path, at_time: Option<f64>, points: usize) -> Result<(), Failure> {
    let cfg = load(common)?;
    let p = cfg.params()?;
    let pulse = load_pulse(pulse_path, common, &cfg)?;
    let t = at_time.unwrap_or(pulse.t_final);
    if !(0.0..=pulse.t_final).contains(&t) {
        return Err(Failure::config(format!("--at-time must lie in [0, {}]", pulse.t_final)));
    }
    if points < 2 {
        return Err(Failure::config("--points must be >= 2"));
    }
    let (_, mom) = simulate(&pulse, &p, cfg.dt)?;
    let j = ((t / mom.grid.dt()).round() as usize).min(mom.moments.len() - 1);
    let v = covariance_from_moments(&mom.moments[j])?.mechanical();
    let grid = WignerGrid {
        n_re: points,
        n_im: points,
        ..WignerGrid::covering(&v)
    };
    let field = wigner(&v, &grid)?;
    let mut dir = RunDir::create(&out_dir(common, "wigner"), "wigner", cfg.to_json(), None)?;
    dir.table("wigner.csv", &wigner_table(&field))?;
    println!(
        "t = {:.4}: V = [[{:.5}, {:.5}], [{:.5}, {:.5}]], normalization {:.5}",
        mom.grid.time(j),
        v[0][0],
        v[0][1],
        v[1][0],
        v[1][1],
        field.total()
    );
    println!("wrote {}", dir.finish()?.display());
    Ok(())
}

/// Smooth drive keeping the linearized coupling small over ten time units.
fn oracle_pulse(cfg: &RunConfig) -> Result<Pulse, Failure> {
    let n = cfg.oracle_bins;
    let omega = (0..n).map(|k| 1000.0 + 400.0 * (0.7 * k as f64).sin()).collect();
    let phi = (0..n).map(|k| 0.15 * k as f64).collect();
    Ok(Pulse::new(cfg.oracle_t_final, omega, phi)?)
}

fn cmd_oracle(common: &Common, pulse_path: Option<&Path>) -> Result<(), Failure> {
    let cfg = load(common)?;
    let p = SystemParams {
        n_bar_m: cfg.oracle_n_bar,
        ..cfg.params()?
    };
    let fock = cfg.fock()?;
    let pulse = match pulse_path {
        Some(path) => read_pulse(path, None)?,
        None => oracle_pulse(&cfg)?,
    };
    let traj = integrate_meanfield(&pulse, &p, MeanFieldState::default(), cfg.dt)?;
    let g = traj.max_abs_coupling();
    if g > 0.2 * p.omega_m {
        eprintln!("warning: max |G| = {g:.3} exceeds the small-coupling regime 0.2");
    }
    let moments = integrate_moments(&traj, &thermal_moments(p.n_bar_m))?;
    let reference = fock_reference_moments(&traj, &p, &fock, p.n_bar_m)?;
    let dev = moment_deviation(&moments, &reference.moments, 1e-4);
    let worst = dev.iter().fold(0.0f64, |m, v| m.max(*v));
    let stride = traj.grid.steps_per_bin;
    let mut dir = RunDir::create(&out_dir(common, "oracle-check"), "oracle-check", cfg.to_json(), None)?;
    dir.table("moments.csv", &trajectory_table(&traj, &moments, stride))?;
    dir.table("fock.csv", &trajectory_table(&traj, &reference.moments, stride))?;
    println!(
        "max |G| = {g:.4}; worst relative moment deviation {worst:.3e} (tolerance {}); top Fock populations {:.2e}",
        cfg.oracle_tolerance, reference.top_population
    );
    println!("wrote {}", dir.finish()?.display());
    if worst > cfg.oracle_tolerance {
        return Err(Failure::acceptance(format!(
            "moment deviation {worst:.3e} exceeds {}",
            cfg.oracle_tolerance
        )));
    }
    Ok(())
}
