//! The toy training regimes, their metrics, rank sweeps and ablations.

mod config;
mod metrics;
mod sweep;
mod train;

pub use config::{Ablation, CriticKind, ExperimentConfig, Regime};
pub use metrics::{compute_metrics, critic_q_table, metrics_of_table, MetricPoint, MetricTrace};
pub use sweep::{
    mean_std, rank_sweep, row_from_trace, run_ablation, sweep_tasks, SummaryRow, SweepResult, SweepRow, SweepTask,
    PLATEAU_FRACTION,
};
pub use train::{build_critic, run, run_bootstrapped_td, run_static_regression, StepRecord, Trainer};
