use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use optosqueeze::io::{RunManifest, Table};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_optosqueeze"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Short, cheap problem: six time units, 60 bins, a modest target.
const SMALL: &str = "t_final = 6.0\nn_bins = 60\ntarget_db = 0.5\nmax_iters = 300\ninit_scale = 3000.0\n\
                     sweep_thetas_deg = [0.0, 90.0]\nsweep_etas = [-0.05, 0.0, 0.05]\ntrials = 3\nt_end = 12.0\n";

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn optimize_small(dir: &Path, name: &str) -> PathBuf {
    let cfg = write_config(dir, SMALL);
    let out = dir.join(name);
    let o = run(&["optimize", "--config", s(&cfg), "--seed", "3", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

#[test]
fn grad_check_defaults_pass() {
    let o = run(&["grad-check"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let line = text
        .lines()
        .find(|l| l.starts_with("full-chain"))
        .expect("full-chain line");
    let err: f64 = line.split_whitespace().nth(4).unwrap().parse().unwrap();
    assert!(err <= 1e-4, "{line}");
    assert!(text.contains("paper-pointwise"));
}

#[test]
fn optimize_writes_results_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = optimize_small(tmp.path(), "opt");
    for f in [
        "pulse.csv",
        "loss_history.csv",
        "squeezing.csv",
        "result.json",
        "manifest.json",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let result: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("result.json")).unwrap()).unwrap();
    for key in [
        "params",
        "config",
        "seed",
        "grad_mode",
        "best_loss",
        "best_db",
        "iterations",
        "wall_time",
    ] {
        assert!(result.get(key).is_some(), "result.json lacks {key}");
    }
    assert_eq!(result["seed"], 3);
    assert_eq!(result["grad_mode"], "full-chain");
    assert!(result["best_db"].as_f64().unwrap() >= 0.5);

    let pulse = Table::read(&out.join("pulse.csv")).unwrap();
    assert_eq!(pulse.header, ["t", "omega", "phi"]);
    assert_eq!(pulse.rows.len(), 60);
    let hist = Table::read(&out.join("loss_history.csv")).unwrap();
    assert_eq!(hist.header, ["iteration", "loss", "S_b", "chi_omega", "chi_phi"]);
    let sq = Table::read(&out.join("squeezing.csv")).unwrap();
    assert_eq!(sq.header, ["t", "variance", "S_b", "bdb", "re_bdbd", "im_bdbd"]);

    let manifest: RunManifest = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.seed, Some(3));
    assert_eq!(manifest.files.len(), 4);
    assert!(manifest.verify(&out).unwrap().is_empty());
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let a = optimize_small(tmp.path(), "a");
    let b = optimize_small(tmp.path(), "b");
    for f in ["pulse.csv", "loss_history.csv", "squeezing.csv"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn zero_pulse_is_never_squeezed() {
    let tmp = tempfile::tempdir().unwrap();
    let pulse = tmp.path().join("zero.csv");
    let mut text = String::from("t,omega,phi\n");
    for k in 0..40 {
        text.push_str(&format!("{},0,0\n", 0.25 * k as f64));
    }
    fs::write(&pulse, text).unwrap();
    let out = tmp.path().join("sim");
    let o = run(&["simulate", "--pulse", s(&pulse), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let sq = Table::read(&out.join("squeezing.csv")).unwrap();
    assert!(sq.column("S_b").unwrap().iter().all(|v| *v <= 0.0));
    let traj = Table::read(&out.join("trajectory.csv")).unwrap();
    assert_eq!(traj.header.len(), 25);
    assert_eq!(traj.header[0], "t");
    assert_eq!(traj.rows.last().unwrap()[0], 10.0);
}

#[test]
fn mismatched_grid_is_rebinned_with_warning() {
    let tmp = tempfile::tempdir().unwrap();
    let opt = optimize_small(tmp.path(), "opt");
    let cfg = write_config(tmp.path(), "t_final = 6.0\nn_bins = 120\n");
    let o = run(&[
        "simulate",
        "--pulse",
        s(&opt.join("pulse.csv")),
        "--config",
        s(&cfg),
        "--out",
        s(&tmp.path().join("sim")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("re-binned from 60 to 120"));
}

#[test]
fn configuration_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let bad_key = write_config(tmp.path(), "kapa = 0.3\n");
    assert_eq!(run(&["grad-check", "--config", s(&bad_key)]).status.code(), Some(2));
    let bad_value = write_config(tmp.path(), "kappa = -0.3\n");
    assert_eq!(run(&["grad-check", "--config", s(&bad_value)]).status.code(), Some(2));
    assert_eq!(run(&["optimize", "--grad-mode", "newton"]).status.code(), Some(2));
    let garbled = tmp.path().join("garbled.csv");
    fs::write(&garbled, "t,omega\n0,1\n").unwrap();
    assert_eq!(run(&["simulate", "--pulse", s(&garbled)]).status.code(), Some(2));
}

#[test]
fn failed_gradient_check_exits_4() {
    let o = run(&["grad-check", "--tolerance", "1e-15"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn dumped_gradient_is_accepted_by_grad_check() {
    let tmp = tempfile::tempdir().unwrap();
    let dump = tmp.path().join("dump");
    let o = run(&["grad-check", "--seed", "4", "--out", s(&dump)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let g = Table::read(&dump.join("gradient_full_chain.csv")).unwrap();
    assert_eq!(g.header, ["bin", "t", "dL_domega", "dL_dphi"]);
    let o = run(&[
        "grad-check",
        "--pulse",
        s(&dump.join("pulse.csv")),
        "--gradient",
        s(&dump.join("gradient_full_chain.csv")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    // A corrupted dump must be caught.
    let mut bad = g.clone();
    bad.rows[3][2] *= 1.01;
    bad.write(&tmp.path().join("bad.csv")).unwrap();
    let o = run(&[
        "grad-check",
        "--pulse",
        s(&dump.join("pulse.csv")),
        "--gradient",
        s(&tmp.path().join("bad.csv")),
    ]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn post_processing_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let opt = optimize_small(tmp.path(), "opt");
    let pulse = opt.join("pulse.csv");

    let out = tmp.path().join("decay");
    let o = run(&["decay", "--pulse", s(&pulse), "--t-end", "12", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let d = Table::read(&out.join("decay.csv")).unwrap();
    assert_eq!(d.rows[0][0], 6.0);
    assert!((d.rows.last().unwrap()[0] - 12.0).abs() < 1e-9);

    let out = tmp.path().join("noise");
    let o = run(&[
        "noise",
        "--pulse",
        s(&pulse),
        "--sigma-omega",
        "200",
        "--trials",
        "3",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("trial-002.csv").exists());
    assert_eq!(Table::read(&out.join("summary.csv")).unwrap().rows.len(), 3);

    let out = tmp.path().join("wigner");
    let o = run(&[
        "wigner",
        "--pulse",
        s(&pulse),
        "--at-time",
        "6",
        "--points",
        "41",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let w = Table::read(&out.join("wigner.csv")).unwrap();
    assert_eq!(w.header, ["D_R", "D_I", "W"]);
    assert_eq!(w.rows.len(), 41 * 41);
    assert!(w.column("W").unwrap().iter().all(|v| *v >= 0.0));

    let o = run(&["wigner", "--pulse", s(&pulse), "--at-time", "7"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweeps_write_one_directory_per_point() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("angle");
    let o = run(&["sweep", "angle", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = Table::read(&out.join("summary.csv")).unwrap();
    assert_eq!(summary.column("theta_deg").unwrap(), vec![0.0, 90.0]);
    assert!(out.join("theta-000.00/pulse.csv").exists());
    assert!(out.join("theta-090.00/result.json").exists());

    let opt = optimize_small(tmp.path(), "opt");
    let out = tmp.path().join("eta");
    let o = run(&[
        "sweep",
        "eta",
        "--config",
        s(&cfg),
        "--pulse",
        s(&opt.join("pulse.csv")),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = Table::read(&out.join("summary.csv")).unwrap();
    assert_eq!(summary.rows.len(), 3);
    assert!(out.join("eta-+0.050/amplitude.csv").exists());
    let o = run(&["sweep", "eta", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn oracle_check_passes_on_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("oracle");
    let o = run(&["oracle-check", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let a = Table::read(&out.join("moments.csv")).unwrap();
    let b = Table::read(&out.join("fock.csv")).unwrap();
    assert_eq!(a.header, b.header);
    assert_eq!(a.rows.len(), b.rows.len());
}
