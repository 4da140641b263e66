//! The 15-state chain: exact model, policies, replay data and features.

mod features;
mod mdp;
mod replay;

pub use features::FeatureMap;
pub use mdp::{
    ChainMdp, Policy, PolicyKind, QTable, StationaryDistribution, LEFT, NUM_ACTIONS, RIGHT,
};
pub use replay::{ReplayBuffer, Transition};

use crate::error::Result;

/// Everything the evaluation metrics need, precomputed once per run: the
/// model, the policies, exact `Q^π`, `d^π` and the frozen features.
/// Replay data is deliberately not part of this type.
#[derive(Debug, Clone)]
pub struct ToyWorld {
    pub mdp: ChainMdp,
    pub target: Policy,
    pub behavior: Policy,
    pub rewards: QTable,
    pub q_true: QTable,
    pub d_pi: StationaryDistribution,
    pub features: FeatureMap<f64>,
}

impl ToyWorld {
    pub fn new(mdp: ChainMdp, feature_dim: usize, seed: u64) -> Result<Self> {
        mdp.validate()?;
        let target = Policy::always_right(mdp.num_states);
        let behavior = Policy::uniform(mdp.num_states);
        let q_true = mdp.solve_true_q(&target)?;
        let d_pi = mdp.stationary_distribution(&target, 1_000_000)?;
        Ok(Self {
            rewards: mdp.reward_table(),
            features: FeatureMap::new(mdp.num_states, feature_dim, seed),
            mdp,
            target,
            behavior,
            q_true,
            d_pi,
        })
    }

    pub fn target_action(&self, s: usize) -> usize {
        self.target.greedy_action(s).unwrap_or(RIGHT)
    }
}
