//! Append-only JSON-lines metrics log, flushed after every record.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, Result};

pub struct MetricsLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsLog {
    pub fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| CliError::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn record<T: Serialize>(&mut self, record: &T) -> Result<()> {
        let line = serde_json::to_string(record).expect("metrics records serialize");
        writeln!(self.out, "{line}")
            .and_then(|_| self.out.flush())
            .map_err(|e| CliError::io(&self.path, e))
    }
}

#[derive(Debug, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event<'a> {
    Config {
        config: &'a str,
    },
    Batch {
        batch: usize,
        tokens: usize,
        train_nll: f64,
        running_train_nll: f64,
        wall_ms: u128,
    },
    Checkpoint {
        batch: usize,
        path: &'a str,
        digest: &'a str,
    },
    EpochEnd {
        batches: usize,
        tokens: u64,
        train_nll: f64,
        wall_ms: u128,
    },
    Eval {
        validation_nll: Option<f64>,
        pair_accuracy: Option<f64>,
    },
}
