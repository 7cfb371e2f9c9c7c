use std::path::{Path, PathBuf};

use optosqueeze::io::{write_atomic, RunManifest, Table};

use crate::failure::Failure;

/// Single writer for a run directory. Every file goes through it so the
/// manifest can list and hash them at the end.
pub struct RunDir {
    root: PathBuf,
    files: Vec<PathBuf>,
    manifest: RunManifest,
}

impl RunDir {
    pub fn create(root: &Path, command: &str, config: serde_json::Value, seed: Option<u64>) -> Result<RunDir, Failure> {
        std::fs::create_dir_all(root).map_err(|e| Failure::from(e).context(&format!("creating {}", root.display())))?;
        Ok(RunDir {
            root: root.to_path_buf(),
            files: Vec::new(),
            manifest: RunManifest::new(command, config, seed),
        })
    }

    pub fn table(&mut self, rel: &str, table: &Table) -> Result<PathBuf, Failure> {
        self.bytes(rel, table.to_csv().as_bytes())
    }

    pub fn json<T: serde::Serialize>(&mut self, rel: &str, value: &T) -> Result<PathBuf, Failure> {
        let text = serde_json::to_string_pretty(value).map_err(|e| Failure::from(optosqueeze::Error::from(e)))?;
        self.bytes(rel, text.as_bytes())
    }

    fn bytes(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf, Failure> {
        let path = self.root.join(rel);
        write_atomic(&path, bytes)?;
        if !self.files.contains(&path) {
            self.files.push(path.clone());
        }
        Ok(path)
    }

    pub fn finish(self) -> Result<PathBuf, Failure> {
        Ok(self.manifest.finish(&self.root, &self.files)?)
    }
}

impl Failure {
    pub fn context(mut self, what: &str) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}
