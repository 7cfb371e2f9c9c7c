//! CSV and JSON persistence for pulses, trajectories, gradients, curves and
//! run manifests. Floats are written with 17 significant digits so files
//! round-trip exactly and reruns are byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::WignerField;
use crate::dynamics::{MeanFieldTrajectory, MomentTrajectory};
use crate::error::{Error, Result};
use crate::experiments::CurvePoint;
use crate::gradient::ControlGradient;
use crate::model::Pulse;
use crate::optimizer::OptimizationResult;

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// A header plus rows of numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for row in &self.rows {
            for (i, x) in row.iter().enumerate() {
                if i > 0 {
                    s.push(',');
                }
                let _ = write!(s, "{}", fmt_f64(*x));
            }
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Table> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| Error::Format("empty CSV".into()))?
            .split(',')
            .map(|h| h.trim().to_string())
            .collect();
        let mut table = Table::new(header);
        for (n, line) in lines.enumerate() {
            let row = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Format(format!("line {}: {e}", n + 2)))?;
            if row.len() != table.header.len() {
                return Err(Error::Format(format!(
                    "line {}: expected {} fields, found {}",
                    n + 2,
                    table.header.len(),
                    row.len()
                )));
            }
            table.rows.push(row);
        }
        Ok(table)
    }

    pub fn read(path: &Path) -> Result<Table> {
        Table::parse(&fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn pulse_table(pulse: &Pulse) -> Table {
    let mut t = Table::new(["t", "omega", "phi"]);
    for k in 0..pulse.n_bins() {
        t.push(vec![pulse.bin_start(k), pulse.omega[k], pulse.phi[k]]);
    }
    t
}

/// Reads a pulse stored at bin left edges. The final time is inferred from
/// the (uniform) spacing unless `t_final` is given.
pub fn pulse_from_table(table: &Table, t_final: Option<f64>) -> Result<Pulse> {
    let col = |name: &str| {
        table
            .column(name)
            .ok_or_else(|| Error::Format(format!("pulse CSV lacks column '{name}'")))
    };
    let (t, omega, phi) = (col("t")?, col("omega")?, col("phi")?);
    if t.is_empty() {
        return Err(Error::Format("pulse CSV has no rows".into()));
    }
    let n = t.len();
    let t_final = match t_final {
        Some(tf) => tf,
        None if n > 1 => n as f64 * (t[n - 1] - t[0]) / (n - 1) as f64,
        None => return Err(Error::Format("cannot infer t_final from a single bin".into())),
    };
    let width = t_final / n as f64;
    for (k, tk) in t.iter().enumerate() {
        if (tk - k as f64 * width).abs() > 1e-9 * t_final.max(1.0) {
            return Err(Error::Format(format!(
                "pulse times are not uniform bin left edges (row {k})"
            )));
        }
    }
    Pulse::new(t_final, omega, phi)
}

pub fn read_pulse(path: &Path, t_final: Option<f64>) -> Result<Pulse> {
    pulse_from_table(&Table::read(path)?, t_final)
}

/// Brings a loaded pulse onto the requested grid, nearest-neighbour in time.
/// Returns a warning message when resampling was needed.
pub fn conform_pulse(pulse: Pulse, t_final: f64, n_bins: usize) -> Result<(Pulse, Option<String>)> {
    if (pulse.t_final - t_final).abs() > 1e-9 * t_final.max(1.0) {
        return Err(Error::invalid(
            "t_final",
            format!("pulse spans {} but the run needs {}", pulse.t_final, t_final),
        ));
    }
    if pulse.n_bins() == n_bins {
        return Ok((pulse, None));
    }
    let msg = format!(
        "pulse re-binned from {} to {} bins (nearest neighbour)",
        pulse.n_bins(),
        n_bins
    );
    log::warn!("{msg}");
    Ok((pulse.rebinned(n_bins), Some(msg)))
}

/// Time, mean fields and all ten moments, every `stride` grid points plus the
/// final point.
pub fn trajectory_table(mf: &MeanFieldTrajectory, mom: &MomentTrajectory, stride: usize) -> Table {
    let mut header = vec!["t".to_string()];
    for name in ["alpha", "beta"].iter().chain(crate::model::idx::LABELS.iter()) {
        header.push(format!("re_{name}"));
        header.push(format!("im_{name}"));
    }
    let mut table = Table::new(header);
    let n = mom.moments.len();
    let stride = stride.max(1);
    let mut idx: Vec<usize> = (0..n).step_by(stride).collect();
    if !(n - 1).is_multiple_of(stride) {
        idx.push(n - 1);
    }
    for j in idx {
        let s = &mf.states[j];
        let mut row = vec![mom.grid.time(j), s.alpha.re, s.alpha.im, s.beta.re, s.beta.im];
        for z in mom.moments[j].x.iter() {
            row.push(z.re);
            row.push(z.im);
        }
        table.push(row);
    }
    table
}

pub fn gradient_table(pulse: &Pulse, g: &ControlGradient) -> Table {
    let mut t = Table::new(["bin", "t", "dL_domega", "dL_dphi"]);
    for k in 0..pulse.n_bins() {
        t.push(vec![k as f64, pulse.bin_start(k), g.d_omega[k], g.d_phi[k]]);
    }
    t
}

pub fn gradient_from_table(table: &Table, mode: crate::gradient::GradientMode) -> Result<ControlGradient> {
    let col = |name: &str| {
        table
            .column(name)
            .ok_or_else(|| Error::Format(format!("gradient CSV lacks column '{name}'")))
    };
    Ok(ControlGradient {
        d_omega: col("dL_domega")?,
        d_phi: col("dL_dphi")?,
        mode,
    })
}

pub fn squeezing_table(curve: &[CurvePoint]) -> Table {
    let mut t = Table::new(["t", "variance", "S_b", "bdb", "re_bdbd", "im_bdbd"]);
    for c in curve {
        t.push(vec![
            c.t,
            c.variance,
            c.degree_db,
            c.mean_phonon,
            c.moment_bdbd.re,
            c.moment_bdbd.im,
        ]);
    }
    t
}

pub fn wigner_table(w: &WignerField) -> Table {
    let mut t = Table::new(["D_R", "D_I", "W"]);
    for (i, x) in w.grid_re.iter().enumerate() {
        for (j, y) in w.grid_im.iter().enumerate() {
            t.push(vec![*x, *y, w.values[i][j]]);
        }
    }
    t
}

pub fn loss_history_table(r: &OptimizationResult) -> Table {
    let mut t = Table::new(["iteration", "loss", "S_b", "chi_omega", "chi_phi"]);
    for (i, (loss, (co, cp))) in r.loss_history.iter().zip(&r.rate_history).enumerate() {
        let db = crate::analysis::squeezing_degree(*loss).unwrap_or(f64::NAN);
        t.push(vec![i as f64, *loss, db, *co, *cp]);
    }
    t
}

/// One emitted file and its content hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl FileEntry {
    pub fn hash(root: &Path, path: &Path) -> Result<FileEntry> {
        let data = fs::read(path)?;
        let rel = path.strip_prefix(root).unwrap_or(path);
        Ok(FileEntry {
            path: rel.to_string_lossy().replace('\\', "/"),
            sha256: hex(&Sha256::digest(&data)),
            bytes: data.len() as u64,
        })
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(2 * bytes.len()), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Record of a run: configuration, seed, timing and emitted files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub files: Vec<FileEntry>,
}

pub fn unix_now() -> f64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            seed,
            started_unix: unix_now(),
            finished_unix: f64::NAN,
            files: Vec::new(),
        }
    }

    /// Hashes `files` (paths inside `dir`) and writes `manifest.json`
    /// atomically.
    pub fn finish(mut self, dir: &Path, files: &[PathBuf]) -> Result<PathBuf> {
        self.files = files.iter().map(|f| FileEntry::hash(dir, f)).collect::<Result<_>>()?;
        self.finished_unix = unix_now();
        let path = dir.join("manifest.json");
        write_atomic(&path, serde_json::to_string_pretty(&self)?.as_bytes())?;
        Ok(path)
    }

    /// Files whose current contents no longer match the recorded hash.
    pub fn verify(&self, dir: &Path) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for f in &self.files {
            let now = FileEntry::hash(dir, &dir.join(&f.path))?;
            if now.sha256 != f.sha256 {
                bad.push(f.path.clone());
            }
        }
        Ok(bad)
    }
}

/// Summary of an optimization run, written as `result.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult<P, C> {
    pub params: P,
    pub config: C,
    pub seed: u64,
    pub grad_mode: crate::gradient::GradientMode,
    pub best_loss: f64,
    pub best_db: f64,
    pub iterations: usize,
    pub wall_time: f64,
    pub status: String,
    pub final_mean_phonon: f64,
}
