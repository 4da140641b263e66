use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypersphere::ProjectionConfig;
use crate::linear::{BaseInit, LoraInit, LoraSpec};
use crate::optim::{AdamConfig, DecayMode, ProjectionMode};
use crate::world::ChainMdp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Static,
    Td,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Static => "static",
            Regime::Td => "td",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriticKind {
    Dense,
    Lora,
    Pruned,
    /// `W = BA` with no frozen backbone.
    Nobase,
}

impl CriticKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CriticKind::Dense => "dense",
            CriticKind::Lora => "lora",
            CriticKind::Pruned => "pruned",
            CriticKind::Nobase => "nobase",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    Nobase,
    LoraNown,
    Pruned,
    HypersphereTd,
}

impl Ablation {
    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Nobase => "nobase",
            Ablation::LoraNown => "lora-nown",
            Ablation::Pruned => "pruned",
            Ablation::HypersphereTd => "hypersphere-td",
        }
    }
}

/// One toy experiment. Every field defaults to the reference toy setting, so
/// `{}` is a valid config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub regime: Regime,
    pub critic_kind: CriticKind,
    pub rank: usize,
    /// LoRA scale numerator; `None` means `alpha = rank`.
    pub alpha: Option<f64>,
    /// Fraction of zeroed weights for the pruned critic.
    pub sparsity: f64,
    pub seeds: Vec<u64>,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub tau: f64,
    pub eval_every: usize,
    pub buffer_size: usize,
    pub hidden: usize,
    pub feature_dim: usize,
    pub num_states: usize,
    pub gamma: f64,
    pub success_prob: f64,
    pub init_mode: LoraInit,
    /// Rescale frozen base rows to this norm; `None` keeps the dense init.
    pub base_norm: Option<f64>,
    /// Rank of the rescaled base; `None` means full rank.
    pub base_rank: Option<usize>,
    pub projection: ProjectionMode,
    /// Decoupled weight decay on adapter factors (AdamW when positive).
    pub weight_decay: f64,
    /// Ranks visited by `sweep`.
    pub ranks: Vec<usize>,
    /// Regimes visited by `sweep`.
    pub regimes: Vec<Regime>,
    pub variant: Option<Ablation>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            regime: Regime::Td,
            critic_kind: CriticKind::Dense,
            rank: 1,
            alpha: None,
            sparsity: 0.9,
            seeds: vec![0, 1, 2, 3, 4],
            steps: 12_000,
            batch: 64,
            lr: 1e-3,
            tau: 0.02,
            eval_every: 300,
            buffer_size: 500,
            hidden: 256,
            feature_dim: 64,
            num_states: 15,
            gamma: 0.97,
            success_prob: 0.9,
            init_mode: LoraInit::ZeroB,
            base_norm: None,
            base_rank: None,
            projection: ProjectionMode::None,
            weight_decay: 0.0,
            ranks: vec![1, 2, 4, 8, 16, 32, 64, 128, 256],
            regimes: vec![Regime::Static, Regime::Td],
            variant: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        self.mdp()?;
        if self.seeds.is_empty() {
            return bad("seeds must be nonempty".into());
        }
        if self.steps == 0 || self.batch == 0 || self.eval_every == 0 {
            return bad("steps, batch and eval_every must be positive".into());
        }
        if self.steps % self.eval_every != 0 {
            return bad(format!("steps {} is not a multiple of eval_every {}", self.steps, self.eval_every));
        }
        if self.hidden == 0 || self.feature_dim == 0 {
            return bad("hidden and feature_dim must be positive".into());
        }
        if self.regime == Regime::Td && self.buffer_size == 0 {
            return bad("td regime needs a nonempty buffer".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("tau must lie in [0, 1], got {}", self.tau));
        }
        if !(0.0..1.0).contains(&self.sparsity) {
            return bad(format!("sparsity must lie in [0, 1), got {}", self.sparsity));
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return bad("weight_decay must be nonnegative".into());
        }
        if self.rank == 0 {
            return bad("rank must be at least 1".into());
        }
        if self.base_rank.is_some() && self.base_norm.is_none() {
            return bad("base_rank needs base_norm".into());
        }
        if self.ranks.is_empty() || self.ranks.contains(&0) {
            return bad("ranks must be nonempty and positive".into());
        }
        if self.regimes.is_empty() {
            return bad("regimes must be nonempty".into());
        }
        Ok(())
    }

    pub fn mdp(&self) -> Result<ChainMdp> {
        ChainMdp::new(self.num_states, self.success_prob, self.gamma)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            decay: if self.weight_decay > 0.0 {
                DecayMode::Decoupled
            } else {
                DecayMode::None
            },
            ..AdamConfig::default()
        }
    }

    pub fn lora_spec(&self) -> LoraSpec {
        let base = match (self.critic_kind, self.base_norm) {
            (CriticKind::Nobase, _) => BaseInit::Zero,
            (_, Some(norm)) => BaseInit::Rescaled {
                norm,
                rank: self.base_rank,
            },
            (_, None) => BaseInit::KeepDense,
        };
        LoraSpec {
            alpha: self.alpha,
            ..LoraSpec::new(self.rank, self.init_mode, base)
        }
    }

    pub fn projection_config(&self) -> ProjectionConfig {
        ProjectionConfig::default()
    }

    /// Config actually trained for an ablation variant.
    ///
    /// `hypersphere-td` and `lora-nown` share everything except the
    /// projection hooks; both use the normal-both adapter init, since a zero
    /// `B` leaves the projection with no direction to scale.
    pub fn for_variant(&self, variant: Ablation) -> Self {
        let mut cfg = self.clone();
        cfg.variant = Some(variant);
        match variant {
            Ablation::Nobase => cfg.critic_kind = CriticKind::Nobase,
            Ablation::Pruned => cfg.critic_kind = CriticKind::Pruned,
            Ablation::LoraNown | Ablation::HypersphereTd => {
                cfg.critic_kind = CriticKind::Lora;
                cfg.regime = Regime::Td;
                cfg.init_mode = LoraInit::NormalBoth;
                cfg.projection = if variant == Ablation::HypersphereTd {
                    ProjectionMode::ProjectLora
                } else {
                    ProjectionMode::None
                };
            }
        }
        cfg
    }

    /// Number of metric rows per run, step 0 included.
    pub fn num_evaluations(&self) -> usize {
        self.steps / self.eval_every + 1
    }
}
