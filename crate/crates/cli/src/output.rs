use std::fs::{self, File};
use std::path::Path;

use serde::{Deserialize, Serialize};

use lrcl_core::regimes::{ExperimentConfig, MetricTrace, Regime, SummaryRow, SweepRow};

use crate::Outcome;

/// Key that marks a JSON document as a manifest rather than a bare config.
pub const MANIFEST_TAG: &str = "lrcl_manifest";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn code_version() -> String {
    format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub regime: Regime,
    /// Absent for dense critics.
    pub rank: Option<usize>,
    pub seed: u64,
    /// Relative to the manifest's directory.
    pub output: String,
    pub wall_clock_secs: Option<f64>,
}

/// Everything needed to repeat a run: the effective config (seeds already
/// shifted) plus where each run's output went and how long it took.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub lrcl_manifest: u32,
    pub command: String,
    pub code_version: String,
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub seed_offset: u64,
    pub runs: Vec<RunEntry>,
    pub total_wall_clock_secs: Option<f64>,
}

impl Manifest {
    pub fn new(command: &str, config: &ExperimentConfig, seed_offset: u64, runs: Vec<RunEntry>) -> Self {
        Self {
            lrcl_manifest: 1,
            command: command.to_string(),
            code_version: code_version(),
            config: config.clone(),
            seeds: config.seeds.clone(),
            seed_offset,
            runs,
            total_wall_clock_secs: None,
        }
    }

    pub fn write(&self, dir: &Path) -> Outcome {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(())
    }
}

fn writer(path: &Path) -> Outcome<csv::Writer<File>> {
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?)
}

#[derive(Serialize)]
struct TraceRow {
    step: usize,
    seed: u64,
    eps_q: f64,
    eps_b: f64,
}

/// `step,seed,eps_q,eps_b`, one row per evaluation.
pub fn write_trace(path: &Path, trace: &MetricTrace) -> Outcome {
    let mut w = writer(path)?;
    for p in &trace.points {
        w.serialize(TraceRow {
            step: p.step,
            seed: trace.seed,
            eps_q: p.eps_q,
            eps_b: p.eps_b,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct RunRow {
    regime: &'static str,
    rank: Option<usize>,
    dense: bool,
    seed: u64,
    final_eps_q: f64,
    final_eps_b: f64,
    plateau_eps_b: f64,
}

pub fn write_sweep_rows(path: &Path, rows: &[SweepRow]) -> Outcome {
    let mut w = writer(path)?;
    for r in rows {
        w.serialize(RunRow {
            regime: r.regime.as_str(),
            rank: r.rank,
            dense: r.is_dense(),
            seed: r.seed,
            final_eps_q: r.final_eps_q,
            final_eps_b: r.final_eps_b,
            plateau_eps_b: r.plateau_eps_b,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct CellRow {
    regime: &'static str,
    rank: Option<usize>,
    dense: bool,
    runs: usize,
    mean_eps_q: f64,
    std_eps_q: f64,
    mean_plateau_eps_b: f64,
    std_plateau_eps_b: f64,
}

pub fn write_summary(path: &Path, summary: &[SummaryRow]) -> Outcome {
    let mut w = writer(path)?;
    for r in summary {
        w.serialize(CellRow {
            regime: r.regime.as_str(),
            rank: r.rank,
            dense: r.is_dense(),
            runs: r.runs,
            mean_eps_q: r.mean_eps_q,
            std_eps_q: r.std_eps_q,
            mean_plateau_eps_b: r.mean_plateau_eps_b,
            std_plateau_eps_b: r.std_plateau_eps_b,
        })?;
    }
    w.flush()?;
    Ok(())
}
