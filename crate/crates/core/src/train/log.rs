use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalx::MetricsReport;
use crate::objectives::LossBreakdown;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: u64,
    pub tasks: Vec<String>,
    pub loss: LossBreakdown,
    pub learning_rate: f64,
    pub grad_norm: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub smart_aborts: usize,
}

fn is_zero(v: &usize) -> bool {
    *v == 0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: u64,
    pub mean_train_loss: f64,
    pub validation: BTreeMap<String, MetricsReport>,
    pub selection_metric: f64,
    pub is_best: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbortRecord {
    pub epoch: usize,
    pub step: u64,
    pub reason: String,
    /// Loss components at the failing step; non-finite values appear as null.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Step(StepRecord),
    Epoch(EpochRecord),
    Abort(AbortRecord),
}

/// In-memory training log, optionally mirrored to a JSONL file.
#[derive(Debug, Default)]
pub struct TrainingLog {
    pub records: Vec<LogRecord>,
    sink: Option<(PathBuf, File)>,
}

impl TrainingLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Appends to `path`, keeping any records already there.
    pub fn open(path: &Path) -> Result<Self> {
        let records = if path.is_file() { read_log(path)? } else { Vec::new() };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            records,
            sink: Some((path.to_path_buf(), file)),
        })
    }

    pub fn push(&mut self, record: LogRecord) -> Result<()> {
        if let Some((path, file)) = &mut self.sink {
            let line = serde_json::to_string(&record)?;
            writeln!(file, "{line}").map_err(|e| Error::io(path.as_path(), e))?;
            file.flush().map_err(|e| Error::io(path.as_path(), e))?;
        }
        self.records.push(record);
        Ok(())
    }

    pub fn steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Step(s) => Some(s),
            _ => None,
        })
    }

    pub fn epochs(&self) -> impl Iterator<Item = &EpochRecord> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Epoch(e) => Some(e),
            _ => None,
        })
    }

    /// Total loss of every step, in order.
    pub fn loss_sequence(&self) -> Vec<f64> {
        self.steps().map(|s| s.loss.total).collect()
    }

    /// Drops step records past `step` (used when resuming from a
    /// checkpoint that predates the end of the log).
    pub fn truncate_after(&mut self, step: u64) {
        self.records.retain(|r| match r {
            LogRecord::Step(s) => s.step < step,
            LogRecord::Epoch(e) => e.steps <= step,
            LogRecord::Abort(a) => a.step < step,
        });
    }

    pub fn path(&self) -> Option<&Path> {
        self.sink.as_ref().map(|(p, _)| p.as_path())
    }

    /// Rewrites the backing file from the in-memory records.
    pub fn rewrite(&mut self) -> Result<()> {
        let Some((path, _)) = &self.sink else { return Ok(()) };
        let path = path.clone();
        let mut body = String::new();
        for r in &self.records {
            body.push_str(&serde_json::to_string(r)?);
            body.push('\n');
        }
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        let file = OpenOptions::new().append(true).open(&path).map_err(|e| Error::io(&path, e))?;
        self.sink = Some((path, file));
        Ok(())
    }
}

pub fn read_log(path: &Path) -> Result<Vec<LogRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Schema {
            location: format!("{}:{}", path.display(), i + 1),
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
