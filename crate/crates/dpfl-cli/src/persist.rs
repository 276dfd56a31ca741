//! Experiment directory layout and binary trace persistence.
//!
//! A completed directory holds: `config.toml` (the canonical snapshot that
//! reproduces the run), `metrics.csv`, `status`, parameter checkpoints, and,
//! when gradient retention is on, `trace/snapshots.bin` + `trace/reports.bin`
//! (little-endian f64 payloads). Audits add files under `attack/` without
//! touching anything else.

use std::fs;
use std::path::{Path, PathBuf};

use dpfl_core::federation::{Strategy, TrainingTrace};
use dpfl_core::models::{save_checkpoint, ModelSpec, ParameterVector};
use dpfl_core::privacy::GradientReport;

use crate::config::ExperimentConfig;
use crate::CliError;

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.csv";
pub const STATUS_FILE: &str = "status";
pub const SNAPSHOTS_FILE: &str = "trace/snapshots.bin";
pub const REPORTS_FILE: &str = "trace/reports.bin";
pub const ATTACK_ROUNDS_FILE: &str = "attack/rounds.csv";
pub const ATTACK_SUMMARY_FILE: &str = "attack/summary.csv";

const SNAPSHOTS_MAGIC: &[u8; 4] = b"DPSS";
const REPORTS_MAGIC: &[u8; 4] = b"DPRL";
const TRACE_VERSION: u32 = 1;

fn io_err(context: &str, error: std::io::Error) -> CliError {
    CliError::Other(format!("{context}: {error}"))
}

/// Root directory for experiments: `$DPFL_OUTPUT_ROOT` or `./runs`.
pub fn output_root() -> PathBuf {
    std::env::var_os("DPFL_OUTPUT_ROOT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// The directory an experiment config maps to.
pub fn experiment_dir(config: &ExperimentConfig) -> PathBuf {
    match &config.output.dir {
        Some(dir) if dir.is_absolute() => dir.clone(),
        Some(dir) => output_root().join(dir),
        None => output_root().join(config.content_hash()),
    }
}

/// `ok`, `failed: ...`, or nothing yet.
pub fn read_status(dir: &Path) -> Option<String> {
    fs::read_to_string(dir.join(STATUS_FILE)).ok().map(|s| s.trim().to_string())
}

pub fn is_complete(dir: &Path) -> bool {
    read_status(dir).as_deref() == Some("ok")
}

pub fn write_status(dir: &Path, status: &str) -> Result<(), CliError> {
    fs::write(dir.join(STATUS_FILE), format!("{status}\n"))
        .map_err(|e| io_err("writing status", e))
}

/// Write the config snapshot, metrics CSV, checkpoints, and (optionally) the
/// binary trace for a finished run.
pub fn write_run(
    dir: &Path,
    config: &ExperimentConfig,
    spec: &ModelSpec,
    trace: &TrainingTrace,
) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err("creating experiment directory", e))?;
    fs::write(dir.join(CONFIG_FILE), config.to_canonical_toml())
        .map_err(|e| io_err("writing config snapshot", e))?;
    fs::write(dir.join(METRICS_FILE), dpfl_core::analysis::metrics_csv(&trace.metrics))
        .map_err(|e| io_err("writing metrics", e))?;

    let checkpoints = dir.join("checkpoints");
    fs::create_dir_all(&checkpoints).map_err(|e| io_err("creating checkpoints dir", e))?;
    let interval = config.output.checkpoint_interval;
    if interval > 0 {
        for (round, snapshot) in trace.snapshots.iter().enumerate() {
            if round % interval == 0 {
                let path = checkpoints.join(format!("round_{round:04}.ckpt"));
                save_checkpoint(&path, spec, snapshot)
                    .map_err(|e| CliError::Other(format!("writing checkpoint: {e}")))?;
            }
        }
    }
    save_checkpoint(checkpoints.join("final.ckpt"), spec, trace.final_params())
        .map_err(|e| CliError::Other(format!("writing final checkpoint: {e}")))?;

    if config.output.retain_gradients {
        write_trace(dir, trace)?;
    }
    Ok(())
}

fn write_trace(dir: &Path, trace: &TrainingTrace) -> Result<(), CliError> {
    let trace_dir = dir.join("trace");
    fs::create_dir_all(&trace_dir).map_err(|e| io_err("creating trace dir", e))?;

    // Snapshots: theta^0 .. theta^T raw values.
    let dim = trace.snapshots[0].dim();
    let mut bytes = Vec::with_capacity(16 + trace.snapshots.len() * dim * 8);
    bytes.extend_from_slice(SNAPSHOTS_MAGIC);
    bytes.extend_from_slice(&TRACE_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(trace.snapshots.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&(dim as u64).to_le_bytes());
    for snapshot in &trace.snapshots {
        for &value in snapshot.values() {
            bytes.extend_from_slice(&value.to_le_bytes());
        }
    }
    fs::write(dir.join(SNAPSHOTS_FILE), bytes).map_err(|e| io_err("writing snapshots", e))?;

    let reports = trace.reports.as_ref().ok_or_else(|| {
        CliError::Other("retain_gradients is set but the trace kept no reports".into())
    })?;
    let clients = reports.first().map(Vec::len).unwrap_or(0);
    let update_dim = reports
        .first()
        .and_then(|round| round.first())
        .map(|r| r.update.len())
        .unwrap_or(0);
    let mut bytes = Vec::new();
    bytes.extend_from_slice(REPORTS_MAGIC);
    bytes.extend_from_slice(&TRACE_VERSION.to_le_bytes());
    bytes.push(match trace.strategy {
        Strategy::St => 0,
        Strategy::Ft => 1,
        Strategy::Ht => 2,
    });
    bytes.extend_from_slice(&(reports.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&(clients as u32).to_le_bytes());
    bytes.extend_from_slice(&(update_dim as u64).to_le_bytes());
    for (round, round_reports) in reports.iter().enumerate() {
        bytes.extend_from_slice(&trace.lrs[round].to_le_bytes());
        for report in round_reports {
            bytes.extend_from_slice(&(report.client_id as u32).to_le_bytes());
            bytes.extend_from_slice(&report.weight.to_le_bytes());
            for &value in &report.update {
                bytes.extend_from_slice(&value.to_le_bytes());
            }
        }
    }
    fs::write(dir.join(REPORTS_FILE), bytes).map_err(|e| io_err("writing reports", e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
    file: &'a str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CliError> {
        let end = self.offset + n;
        if end > self.bytes.len() {
            return Err(CliError::Audit(format!("{} is truncated", self.file)));
        }
        let slice = &self.bytes[self.offset..end];
        self.offset = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, CliError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CliError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CliError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// The persisted slice of a trace that audits need.
pub struct StoredTrace {
    pub strategy: Strategy,
    pub snapshots: Vec<ParameterVector>,
    pub reports: Vec<Vec<GradientReport>>,
    pub lrs: Vec<f64>,
}

/// Load `trace/` back. The model spec supplies the parameter layout.
pub fn read_trace(dir: &Path, spec: &ModelSpec) -> Result<StoredTrace, CliError> {
    let snapshots_path = dir.join(SNAPSHOTS_FILE);
    let reports_path = dir.join(REPORTS_FILE);
    if !snapshots_path.exists() || !reports_path.exists() {
        return Err(CliError::Audit(format!(
            "{} has no retained gradient log; rerun with output.retain_gradients = true",
            dir.display()
        )));
    }

    let bytes = fs::read(&snapshots_path).map_err(|e| io_err("reading snapshots", e))?;
    let mut cursor = Cursor { bytes: &bytes, offset: 0, file: "snapshots.bin" };
    if cursor.take(4)? != SNAPSHOTS_MAGIC {
        return Err(CliError::Audit("snapshots.bin has a wrong magic number".into()));
    }
    if cursor.u32()? != TRACE_VERSION {
        return Err(CliError::Audit("snapshots.bin has an unsupported version".into()));
    }
    let count = cursor.u32()? as usize;
    let dim = cursor.u64()? as usize;
    let layout = spec.layout();
    if dim != layout.dim {
        return Err(CliError::Audit(format!(
            "snapshots have dimension {dim} but the configured model needs {}",
            layout.dim
        )));
    }
    let mut snapshots = Vec::with_capacity(count);
    for _ in 0..count {
        let mut values = Vec::with_capacity(dim);
        for _ in 0..dim {
            values.push(cursor.f64()?);
        }
        snapshots.push(
            ParameterVector::new(values, layout.clone())
                .map_err(|e| CliError::Audit(e.to_string()))?,
        );
    }

    let bytes = fs::read(&reports_path).map_err(|e| io_err("reading reports", e))?;
    let mut cursor = Cursor { bytes: &bytes, offset: 0, file: "reports.bin" };
    if cursor.take(4)? != REPORTS_MAGIC {
        return Err(CliError::Audit("reports.bin has a wrong magic number".into()));
    }
    if cursor.u32()? != TRACE_VERSION {
        return Err(CliError::Audit("reports.bin has an unsupported version".into()));
    }
    let strategy = match cursor.take(1)?[0] {
        0 => Strategy::St,
        1 => Strategy::Ft,
        2 => Strategy::Ht,
        other => return Err(CliError::Audit(format!("unknown strategy tag {other}"))),
    };
    let rounds = cursor.u32()? as usize;
    let clients = cursor.u32()? as usize;
    let update_dim = cursor.u64()? as usize;
    let mut lrs = Vec::with_capacity(rounds);
    let mut reports = Vec::with_capacity(rounds);
    for round in 0..rounds {
        lrs.push(cursor.f64()?);
        let mut round_reports = Vec::with_capacity(clients);
        for _ in 0..clients {
            let client_id = cursor.u32()? as usize;
            let weight = cursor.f64()?;
            let mut update = Vec::with_capacity(update_dim);
            for _ in 0..update_dim {
                update.push(cursor.f64()?);
            }
            round_reports.push(GradientReport {
                client_id,
                round,
                update,
                weight,
                audit_trace: None,
            });
        }
        reports.push(round_reports);
    }

    Ok(StoredTrace { strategy, snapshots, reports, lrs })
}

/// Parse a metrics CSV back into (round, accuracy) pairs and the best value.
pub fn read_best_accuracy(dir: &Path) -> Result<f64, CliError> {
    let text = fs::read_to_string(dir.join(METRICS_FILE))
        .map_err(|e| io_err("reading metrics.csv", e))?;
    let mut best = f64::NEG_INFINITY;
    for line in text.lines().skip(2) {
        let mut fields = line.split(',');
        let accuracy: f64 = fields
            .nth(1)
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| CliError::Other(format!("malformed metrics row `{line}`")))?;
        best = best.max(accuracy);
    }
    if best.is_finite() {
        Ok(best)
    } else {
        Err(CliError::Other("metrics.csv has no rows".into()))
    }
}

/// Parse the attack summary written by an audit, if present.
pub fn read_attack_summary(dir: &Path) -> Option<(f64, f64)> {
    let text = fs::read_to_string(dir.join(ATTACK_SUMMARY_FILE)).ok()?;
    let row = text.lines().nth(2)?;
    let fields: Vec<&str> = row.split(',').collect();
    let best_auc = fields.first()?.parse().ok()?;
    let best_asr = fields.get(2)?.parse().ok()?;
    Some((best_auc, best_asr))
}

/// Write the attack CSV pair under `attack/`.
pub fn write_attack_report(
    dir: &Path,
    report: &dpfl_core::attacks::AttackReport,
) -> Result<(), CliError> {
    let attack_dir = dir.join("attack");
    fs::create_dir_all(&attack_dir).map_err(|e| io_err("creating attack dir", e))?;
    let (rounds, summary) = dpfl_core::attacks::attack_csv(report);
    fs::write(dir.join(ATTACK_ROUNDS_FILE), rounds).map_err(|e| io_err("writing attack rounds", e))?;
    fs::write(dir.join(ATTACK_SUMMARY_FILE), summary)
        .map_err(|e| io_err("writing attack summary", e))
}
