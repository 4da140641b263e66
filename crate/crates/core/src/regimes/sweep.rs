use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Ablation, CriticKind, ExperimentConfig, Regime};
use super::metrics::MetricTrace;
use super::train;
use crate::error::{Error, Result};

/// Fraction of evaluations averaged for the late-stage residual plateau.
pub const PLATEAU_FRACTION: f64 = 0.1;

/// One finished `(regime, critic, seed)` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub regime: Regime,
    /// `None` for the dense baseline.
    pub rank: Option<usize>,
    pub seed: u64,
    pub final_eps_q: f64,
    pub final_eps_b: f64,
    pub plateau_eps_b: f64,
}

impl SweepRow {
    pub fn is_dense(&self) -> bool {
        self.rank.is_none()
    }
}

/// Seed statistics of one `(regime, critic)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub regime: Regime,
    pub rank: Option<usize>,
    pub runs: usize,
    pub mean_eps_q: f64,
    pub std_eps_q: f64,
    pub mean_plateau_eps_b: f64,
    pub std_plateau_eps_b: f64,
}

impl SummaryRow {
    pub fn is_dense(&self) -> bool {
        self.rank.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// Sorted by regime, then dense first, then rank, then seed.
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SummaryRow>,
}

impl SweepResult {
    pub fn cell(&self, regime: Regime, rank: Option<usize>) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.regime == regime && r.rank == rank)
    }
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// A single sweep task: which config to run for which seed.
#[derive(Debug, Clone)]
pub struct SweepTask {
    pub regime: Regime,
    pub rank: Option<usize>,
    pub seed: u64,
    pub config: ExperimentConfig,
}

/// Dense plus one LoRA cell per rank, for every configured regime and seed.
pub fn sweep_tasks(cfg: &ExperimentConfig, ranks: &[usize]) -> Vec<SweepTask> {
    let mut tasks = Vec::new();
    for &regime in &cfg.regimes {
        let cells = std::iter::once(None).chain(ranks.iter().map(|&r| Some(r)));
        for rank in cells {
            let mut c = cfg.clone();
            c.regime = regime;
            match rank {
                None => c.critic_kind = CriticKind::Dense,
                Some(r) => {
                    c.critic_kind = CriticKind::Lora;
                    c.rank = r;
                }
            }
            for &seed in &cfg.seeds {
                tasks.push(SweepTask {
                    regime,
                    rank,
                    seed,
                    config: c.clone(),
                });
            }
        }
    }
    tasks
}

fn summarize(rows: &[SweepRow]) -> Vec<SummaryRow> {
    let mut cells: BTreeMap<(Regime, Option<usize>), Vec<&SweepRow>> = BTreeMap::new();
    for r in rows {
        cells.entry((r.regime, r.rank)).or_default().push(r);
    }
    cells
        .into_iter()
        .map(|((regime, rank), runs)| {
            let q: Vec<f64> = runs.iter().map(|r| r.final_eps_q).collect();
            let b: Vec<f64> = runs.iter().map(|r| r.plateau_eps_b).collect();
            let (mean_eps_q, std_eps_q) = mean_std(&q);
            let (mean_plateau_eps_b, std_plateau_eps_b) = mean_std(&b);
            SummaryRow {
                regime,
                rank,
                runs: runs.len(),
                mean_eps_q,
                std_eps_q,
                mean_plateau_eps_b,
                std_plateau_eps_b,
            }
        })
        .collect()
}

/// Runs every sweep task on `jobs` worker threads and aggregates the finals.
/// `on_done` sees each finished run with its full trace, in completion order;
/// an error from it aborts the sweep.
pub fn rank_sweep(
    cfg: &ExperimentConfig,
    ranks: &[usize],
    jobs: usize,
    on_done: &(dyn Fn(&SweepTask, &MetricTrace, &SweepRow) -> Result<()> + Sync),
) -> Result<SweepResult> {
    if ranks.is_empty() {
        return Err(Error::InvalidArgument("rank sweep needs at least one rank".into()));
    }
    cfg.validate()?;
    let tasks = sweep_tasks(cfg, ranks);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let results: Vec<Result<SweepRow>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|t| {
                let trace = train::run(&t.config, t.seed)?;
                let row = row_from_trace(t.regime, t.rank, &trace);
                on_done(t, &trace, &row)?;
                Ok(row)
            })
            .collect()
    });
    let mut rows = results.into_iter().collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| (a.regime, a.rank, a.seed).cmp(&(b.regime, b.rank, b.seed)));
    let summary = summarize(&rows);
    Ok(SweepResult { rows, summary })
}

pub fn row_from_trace(regime: Regime, rank: Option<usize>, trace: &MetricTrace) -> SweepRow {
    SweepRow {
        regime,
        rank,
        seed: trace.seed,
        final_eps_q: trace.final_eps_q(),
        final_eps_b: trace.final_eps_b(),
        plateau_eps_b: trace.tail_mean_eps_b(PLATEAU_FRACTION),
    }
}

pub fn run_ablation(cfg: &ExperimentConfig, variant: Ablation, seed: u64) -> Result<MetricTrace> {
    train::run(&cfg.for_variant(variant), seed)
}
