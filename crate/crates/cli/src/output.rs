//! Run-directory layout and CSV output.
//!
//! Every CSV starts with the fully resolved configuration as `#`
//! comment lines, so a result file is reproducible from its own header.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use crate::config::ExperimentConfig;

pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Creates the run directory tree and writes the config snapshot.
    pub fn prepare(root: &Path, cfg: &ExperimentConfig) -> Result<Self> {
        for sub in ["", "checkpoints", "logs", "fl"] {
            fs::create_dir_all(root.join(sub))
                .with_context(|| format!("creating {}", root.join(sub).display()))?;
        }
        fs::write(root.join("config.toml"), cfg.to_toml())
            .with_context(|| format!("writing {}", root.join("config.toml").display()))?;
        Ok(RunDir {
            root: root.to_path_buf(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn logs(&self) -> PathBuf {
        self.root.join("logs")
    }

    pub fn fl(&self) -> PathBuf {
        self.root.join("fl")
    }
}

/// CSV file with the resolved config in comment headers.
pub struct CsvFile {
    writer: BufWriter<File>,
    path: PathBuf,
}

impl CsvFile {
    pub fn create(path: &Path, cfg: &ExperimentConfig, columns: &[&str]) -> Result<Self> {
        let file =
            File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut writer = BufWriter::new(file);
        for line in cfg.to_toml().lines() {
            writeln!(writer, "# {line}")?;
        }
        writeln!(writer, "{}", columns.join(","))?;
        Ok(CsvFile {
            writer,
            path: path.to_path_buf(),
        })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<()> {
        writeln!(self.writer, "{}", fields.join(","))
            .with_context(|| format!("writing {}", self.path.display()))
    }

    pub fn finish(mut self) -> Result<()> {
        self.writer
            .flush()
            .with_context(|| format!("flushing {}", self.path.display()))
    }
}

/// Shortest-round-trip float formatting (deterministic across reruns).
pub fn fmt_f64(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v}")
    }
}
