use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::Protocol;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// One record per training epoch.
    Train,
    /// Held-out or live-update evaluation of one snapshot.
    Eval,
    Validation,
    Test,
    Summary,
}

/// One JSON-lines record. Snapshot indices are 0-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub protocol: Protocol,
    pub phase: Phase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mrr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
    /// Positive edges (link prediction) or positive labels (node
    /// classification) behind the record.
    pub positives: usize,
    pub wall_ms: u64,
}

impl MetricsRecord {
    pub fn new(protocol: Protocol, phase: Phase) -> Self {
        MetricsRecord {
            protocol,
            phase,
            snapshot: None,
            epoch: None,
            mrr: None,
            auc: None,
            loss: None,
            positives: 0,
            wall_ms: 0,
        }
    }
}

/// Last line of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub protocol: Protocol,
    pub phase: Phase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_mrr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_auc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_validation_auc: Option<f64>,
    pub epochs_run: usize,
    pub train_snapshots: usize,
    pub evaluated_snapshots: usize,
    /// SHA-256 of the parameters the reported metrics were computed with.
    pub checksum: String,
    pub wall_ms: u64,
}

impl Summary {
    pub fn new(protocol: Protocol) -> Self {
        Summary {
            protocol,
            phase: Phase::Summary,
            mean_mrr: None,
            test_auc: None,
            best_epoch: None,
            best_validation_auc: None,
            epochs_run: 0,
            train_snapshots: 0,
            evaluated_snapshots: 0,
            checksum: String::new(),
            wall_ms: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub records: Vec<MetricsRecord>,
    pub summary: Summary,
}

/// Collects records and appends each one, flushed, to an optional sink.
pub struct Recorder<'w> {
    sink: Option<&'w mut dyn Write>,
    wall_time: bool,
    start: Instant,
    records: Vec<MetricsRecord>,
}

impl<'w> Recorder<'w> {
    pub fn new(wall_time: bool) -> Self {
        Recorder {
            sink: None,
            wall_time,
            start: Instant::now(),
            records: Vec::new(),
        }
    }

    pub fn with_sink(sink: &'w mut dyn Write, wall_time: bool) -> Self {
        Recorder {
            sink: Some(sink),
            ..Recorder::new(wall_time)
        }
    }

    fn elapsed_ms(&self) -> u64 {
        if self.wall_time {
            self.start.elapsed().as_millis() as u64
        } else {
            0
        }
    }

    fn write_line<T: Serialize>(&mut self, value: &T) -> Result<()> {
        if let Some(sink) = self.sink.as_mut() {
            let line = serde_json::to_string(value).map_err(|e| Error::Format(e.to_string()))?;
            writeln!(sink, "{line}")?;
            sink.flush()?;
        }
        Ok(())
    }

    pub fn push(&mut self, mut record: MetricsRecord) -> Result<()> {
        record.wall_ms = self.elapsed_ms();
        self.write_line(&record)?;
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[MetricsRecord] {
        &self.records
    }

    pub fn finish(mut self, mut summary: Summary) -> Result<RunOutput> {
        summary.wall_ms = self.elapsed_ms();
        self.write_line(&summary)?;
        Ok(RunOutput {
            records: self.records,
            summary,
        })
    }
}

pub(crate) fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}
