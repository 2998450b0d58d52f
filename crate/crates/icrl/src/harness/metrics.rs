//! Append-only run metrics: one JSON object per line.
//!
//! The metrics file is part of the determinism contract: two executions of
//! the same (config, seed) produce byte-identical files. Wall-clock timings
//! therefore live in a separate sidecar file, `timing.jsonl`.

use crate::error::{IcrlError, Result};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const TIMING_FILE: &str = "timing.jsonl";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsRecord {
    pub step: u64,
    pub success_rate: f64,
    pub mean_return: f64,
    pub time_in_goal: f64,
    /// InfoNCE loss for the contrastive learner; value-head loss for the
    /// baseline.
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub mean_positive_energy: f64,
    pub mean_negative_energy: f64,
    pub alpha: f64,
    pub buffer_episodes: usize,
    pub updates: u64,
}

pub struct MetricsWriter {
    metrics: BufWriter<File>,
    timing: BufWriter<File>,
    last_step: Option<u64>,
    started: std::time::Instant,
}

impl MetricsWriter {
    pub fn create(run_dir: &Path) -> Result<Self> {
        let open = |name: &str| -> Result<BufWriter<File>> {
            let f = File::create(run_dir.join(name))
                .map_err(|e| IcrlError::io(format!("create {name}"), e))?;
            Ok(BufWriter::new(f))
        };
        Ok(Self {
            metrics: open(METRICS_FILE)?,
            timing: open(TIMING_FILE)?,
            last_step: None,
            started: std::time::Instant::now(),
        })
    }

    /// Append one record; steps must strictly increase within a run.
    pub fn append(&mut self, rec: &MetricsRecord) -> Result<()> {
        if let Some(last) = self.last_step {
            if rec.step <= last {
                return Err(IcrlError::invalid(
                    "MetricsWriter::append",
                    format!("step {} does not increase past {}", rec.step, last),
                ));
            }
        }
        self.last_step = Some(rec.step);
        let line = serde_json::to_string(rec)
            .map_err(|e| IcrlError::parse("MetricsWriter::append", e.to_string()))?;
        writeln!(self.metrics, "{line}").map_err(|e| IcrlError::io("metrics write", e))?;
        self.metrics.flush().map_err(|e| IcrlError::io("metrics flush", e))?;
        writeln!(
            self.timing,
            "{{\"step\":{},\"wall_clock_s\":{:.3}}}",
            rec.step,
            self.started.elapsed().as_secs_f64()
        )
        .map_err(|e| IcrlError::io("timing write", e))?;
        self.timing.flush().map_err(|e| IcrlError::io("timing flush", e))?;
        Ok(())
    }
}

/// Read a metrics file back, verifying the step monotonicity invariant.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let f = File::open(path).map_err(|e| IcrlError::io(format!("open {}", path.display()), e))?;
    let mut out: Vec<MetricsRecord> = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| IcrlError::io("read metrics", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: MetricsRecord = serde_json::from_str(&line)
            .map_err(|e| IcrlError::parse(format!("metrics line {}", i + 1), e.to_string()))?;
        if let Some(prev) = out.last() {
            if rec.step <= prev.step {
                return Err(IcrlError::parse(
                    "read_metrics",
                    format!("steps not strictly increasing at line {}", i + 1),
                ));
            }
        }
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(step: u64) -> MetricsRecord {
        MetricsRecord {
            step,
            success_rate: 0.5,
            mean_return: 1.0,
            time_in_goal: 0.25,
            critic_loss: 2.0,
            actor_loss: -0.5,
            mean_positive_energy: -1.0,
            mean_negative_energy: -3.0,
            alpha: 0.1,
            buffer_episodes: 10,
            updates: 4,
        }
    }

    #[test]
    fn append_and_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = MetricsWriter::create(dir.path()).unwrap();
        w.append(&rec(0)).unwrap();
        w.append(&rec(100)).unwrap();
        drop(w);
        let rows = read_metrics(&dir.path().join(METRICS_FILE)).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].step, 100);
    }

    #[test]
    fn nonincreasing_steps_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = MetricsWriter::create(dir.path()).unwrap();
        w.append(&rec(10)).unwrap();
        assert!(w.append(&rec(10)).is_err());
    }
}
