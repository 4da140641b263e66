use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::ToyCritic;
use crate::world::{QTable, ToyWorld, NUM_ACTIONS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricPoint {
    pub step: usize,
    /// True-Q error weighted by the target policy's stationary distribution.
    pub eps_q: f64,
    /// RMS of `Q - T^π Q` over all pairs, with the exact model.
    pub eps_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTrace {
    pub seed: u64,
    pub points: Vec<MetricPoint>,
}

impl MetricTrace {
    pub fn last(&self) -> Option<&MetricPoint> {
        self.points.last()
    }

    pub fn final_eps_q(&self) -> f64 {
        self.last().map_or(f64::NAN, |p| p.eps_q)
    }

    pub fn final_eps_b(&self) -> f64 {
        self.last().map_or(f64::NAN, |p| p.eps_b)
    }

    /// Mean `eps_b` over the last `ceil(fraction * len)` evaluations.
    pub fn tail_mean_eps_b(&self, fraction: f64) -> f64 {
        let n = self.points.len();
        let k = ((fraction * n as f64).ceil() as usize).clamp(1, n.max(1));
        let tail = &self.points[n.saturating_sub(k)..];
        tail.iter().map(|p| p.eps_b).sum::<f64>() / tail.len() as f64
    }
}

/// The critic's value on every `(s, a)` pair, laid out like `Q^π`.
pub fn critic_q_table(critic: &ToyCritic<f64>, world: &ToyWorld) -> Result<QTable> {
    let values = critic.values(world.features.table())?;
    let table = Array2::from_shape_vec((world.mdp.num_states, NUM_ACTIONS), values.to_vec())
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(table)
}

/// `(eps_q, eps_b)` of an arbitrary Q-table. Only the exact model enters;
/// replay data never does.
pub fn metrics_of_table(q: &QTable, world: &ToyWorld) -> Result<(f64, f64)> {
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("critic values"));
    }
    let mut weighted = 0.0;
    for s in 0..world.mdp.num_states {
        let a = world.target_action(s);
        let d = q[[s, a]] - world.q_true[[s, a]];
        weighted += world.d_pi.probs[s] * d * d;
    }
    let backed_up = world.mdp.bellman_operator(q, &world.target)?;
    let residual = q - &backed_up;
    let eps_b = (residual.iter().map(|r| r * r).sum::<f64>() / residual.len() as f64).sqrt();
    Ok((weighted.sqrt(), eps_b))
}

pub fn compute_metrics(critic: &ToyCritic<f64>, world: &ToyWorld) -> Result<(f64, f64)> {
    metrics_of_table(&critic_q_table(critic, world)?, world)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::ChainMdp;

    fn world() -> ToyWorld {
        ToyWorld::new(ChainMdp::default(), 8, 0).unwrap()
    }

    #[test]
    fn exact_values_have_zero_error() {
        let w = world();
        let (q, b) = metrics_of_table(&w.q_true, &w).unwrap();
        assert!(q < 1e-8 && b < 1e-8);
    }

    #[test]
    fn constant_shift() {
        let w = world();
        let (q, b) = metrics_of_table(&(&w.q_true + 1.0), &w).unwrap();
        assert!((q - 1.0).abs() < 1e-12);
        assert!((b - 0.03).abs() < 1e-12);
    }

    #[test]
    fn zero_critic_residual_is_reward_rms() {
        let w = world();
        let (_, b) = metrics_of_table(&QTable::zeros((15, 2)), &w).unwrap();
        let rms = (w.rewards.iter().map(|r| r * r).sum::<f64>() / 30.0).sqrt();
        assert!((b - rms).abs() < 1e-15);
        assert!((b - 0.9 / 30f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn tail_mean() {
        let points = (0..41)
            .map(|i| MetricPoint {
                step: i * 300,
                eps_q: 0.0,
                eps_b: i as f64,
            })
            .collect();
        let t = MetricTrace { seed: 0, points };
        // ceil(4.1) = 5 evaluations: 36..=40
        assert_eq!(t.tail_mean_eps_b(0.1), 38.0);
        assert_eq!(t.final_eps_b(), 40.0);
    }

    #[test]
    fn non_finite_table_rejected() {
        let w = world();
        let mut q = w.q_true.clone();
        q[[3, 1]] = f64::NAN;
        assert!(matches!(metrics_of_table(&q, &w), Err(Error::NonFinite(_))));
    }
}
