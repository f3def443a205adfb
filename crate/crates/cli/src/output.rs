//! Output directory bookkeeping: every file written is hashed into the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use koopgen_core::io::{sha256_file, write_matrix_csv, write_rows_csv};
use koopgen_core::WeightTable;
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, RUN_FORMAT};
use crate::CliError;

pub struct OutputDir {
    root: PathBuf,
    files: BTreeMap<String, String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::config(format!("cannot create {}: {e}", root.display())))?;
        Ok(Self {
            root: root.to_path_buf(),
            files: BTreeMap::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn record(&mut self, name: &str) -> Result<(), CliError> {
        self.files.insert(name.to_string(), sha256_file(&self.path(name))?);
        Ok(())
    }

    pub fn matrix(&mut self, name: &str, m: &DMatrix<f64>) -> Result<(), CliError> {
        write_matrix_csv(&self.path(name), m)?;
        self.record(name)
    }

    pub fn rows(&mut self, name: &str, header: &[&str], rows: &[Vec<f64>]) -> Result<(), CliError> {
        write_rows_csv(&self.path(name), Some(header), rows)?;
        self.record(name)
    }

    pub fn table(&mut self, name: &str, t: &WeightTable) -> Result<(), CliError> {
        t.write_csv(&self.path(name))?;
        self.record(name)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::config(e.to_string()))?;
        self.text(name, &(text + "\n"))
    }

    pub fn text(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        fs::write(self.path(name), text).map_err(|e| CliError::config(format!("cannot write {name}: {e}")))?;
        self.record(name)
    }

    /// Registers a file written by someone else (e.g. a dataset subdirectory).
    pub fn adopt(&mut self, name: &str) -> Result<(), CliError> {
        self.record(name)
    }

    /// Writes `manifest.json`: config echo, file hashes and a command summary.
    pub fn finish(self, command: &str, cfg: &ExperimentConfig, summary: Value) -> Result<(), CliError> {
        let manifest = json!({
            "format": RUN_FORMAT,
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "config": cfg,
            "files": self.files,
            "summary": summary,
        });
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::config(e.to_string()))?;
        fs::write(self.path("manifest.json"), text + "\n")
            .map_err(|e| CliError::config(format!("cannot write manifest: {e}")))
    }
}
