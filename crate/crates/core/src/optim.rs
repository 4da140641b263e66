//! Adam / AdamW, Polyak target averaging and post-update projection hooks.

use std::collections::BTreeMap;

use ndarray::{ArrayD, ArrayViewD, ArrayViewMutD, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypersphere::{normalize_rows_in_place, project_lora, ProjectionConfig};
use crate::linear::LinearMap;
use crate::nets::Critic;
use crate::params::{Gradients, ParamGroup, Parameterized};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecayMode {
    #[default]
    None,
    /// `θ ← θ - η λ θ` before the Adam step, on adapter tensors only.
    Decoupled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub decay: DecayMode,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            decay: DecayMode::None,
        }
    }
}

/// First and second moment estimates of one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub m: ArrayD<T>,
    pub v: ArrayD<T>,
}

impl<T: Scalar> Moments<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            m: ArrayD::zeros(shape),
            v: ArrayD::zeros(shape),
        }
    }
}

/// One bias-corrected Adam update of `param` at step `t` (1-based).
/// With `decay` set, decoupled weight decay is applied first.
pub fn adam_step<T: Scalar>(
    cfg: &AdamConfig,
    t: u64,
    mut param: ArrayViewMutD<'_, T>,
    grad: ArrayViewD<'_, T>,
    moments: &mut Moments<T>,
    decay: bool,
) -> Result<()> {
    if param.shape() != grad.shape() || moments.m.shape() != param.shape() {
        return Err(Error::ShapeMismatch {
            context: "adam step",
            expected: param.shape().to_vec(),
            got: grad.shape().to_vec(),
        });
    }
    let lr = T::lit(cfg.lr);
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let eps = T::lit(cfg.eps);
    let t = t.min(i32::MAX as u64) as i32;
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    let shrink = T::one() - lr * T::lit(cfg.weight_decay);
    Zip::from(&mut param)
        .and(&grad)
        .and(&mut moments.m)
        .and(&mut moments.v)
        .for_each(|p, &g, m, v| {
            if decay {
                *p = *p * shrink;
            }
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        });
    Ok(())
}

/// Adam over every trainable tensor of a network. Frozen tensors are skipped.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    state: BTreeMap<String, Moments<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            state: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, name: &str) -> Option<&Moments<T>> {
        self.state.get(name)
    }

    pub fn step(&mut self, net: &mut impl Parameterized<T>, grads: &Gradients<T>) -> Result<()> {
        self.step += 1;
        let t = self.step;
        let cfg = self.config;
        let state = &mut self.state;
        let mut failure = None;
        net.visit_params_mut("", &mut |name, group, param| {
            if failure.is_some() || group == ParamGroup::Frozen {
                return;
            }
            let Some(grad) = grads.get(name) else {
                failure = Some(Error::MissingGradient(name.to_string()));
                return;
            };
            let moments = state
                .entry(name.to_string())
                .or_insert_with(|| Moments::zeros(param.shape()));
            let decay = cfg.decay == DecayMode::Decoupled && group == ParamGroup::Adapter;
            if let Err(e) = adam_step(&cfg, t, param, grad.view(), moments, decay) {
                failure = Some(e);
            }
        });
        failure.map_or(Ok(()), Err)
    }
}

/// `θ̄ ← (1 - τ) θ̄ + τ θ` for every trainable tensor. Frozen tensors are
/// shared by construction and left as they are.
pub fn polyak_update<T: Scalar, P: Parameterized<T>>(target: &mut P, online: &P, tau: T) -> Result<()> {
    let mut online_params = Vec::new();
    online.visit_params("", &mut |name, group, view| {
        online_params.push((name.to_string(), group, view));
    });
    let mut i = 0;
    let mut failure = None;
    target.visit_params_mut("", &mut |name, group, mut param| {
        if failure.is_some() {
            return;
        }
        let Some((oname, ogroup, value)) = online_params.get(i) else {
            failure = Some(Error::RegistryMismatch(format!("target has extra tensor {name}")));
            return;
        };
        i += 1;
        if oname != name || *ogroup != group || value.shape() != param.shape() {
            failure = Some(Error::RegistryMismatch(format!("{name} vs {oname}")));
            return;
        }
        if group == ParamGroup::Frozen {
            return;
        }
        let keep = T::one() - tau;
        Zip::from(&mut param)
            .and(value)
            .for_each(|p, &o| *p = keep * *p + tau * o);
    });
    if failure.is_none() && i != online_params.len() {
        failure = Some(Error::RegistryMismatch("online has extra tensors".into()));
    }
    failure.map_or(Ok(()), Err)
}

/// Which projection follows each optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectionMode {
    #[default]
    None,
    /// Unit-normalize every row of each designated dense map.
    RowNormalize,
    /// Base-preserving projection on LoRA maps, plain row normalization on
    /// the remaining designated dense maps.
    ProjectLora,
}

impl ProjectionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ProjectionMode::None => "none",
            ProjectionMode::RowNormalize => "row-normalize",
            ProjectionMode::ProjectLora => "project-lora",
        }
    }
}

fn normalize_dense<T: Scalar>(map: &mut LinearMap<T>) -> Result<()> {
    match map {
        LinearMap::Dense(d) if d.trainable => normalize_rows_in_place(&mut d.weight),
        LinearMap::Dense(_) => Ok(()),
        LinearMap::Pruned(p) => {
            normalize_rows_in_place(&mut p.weight)?;
            p.enforce_mask();
            Ok(())
        }
        LinearMap::Lora(_) => Err(Error::HookMismatch {
            mode: "row-normalize",
            reason: "normalizing a LoRA map's effective weight would rescale its frozen base".into(),
        }),
    }
}

/// Applies `mode` to the critic's designated weight matrices.
pub fn post_update_hook<T: Scalar, C: Critic<T>>(
    critic: &mut C,
    mode: ProjectionMode,
    cfg: &ProjectionConfig,
) -> Result<()> {
    match mode {
        ProjectionMode::None => Ok(()),
        ProjectionMode::RowNormalize => {
            for map in critic.projected_maps_mut() {
                normalize_dense(map)?;
            }
            Ok(())
        }
        ProjectionMode::ProjectLora => {
            let mut maps = critic.projected_maps_mut();
            if !maps.iter().any(|m| m.as_lora().is_some()) {
                return Err(Error::HookMismatch {
                    mode: "project-lora",
                    reason: "critic has no LoRA maps".into(),
                });
            }
            for map in maps.iter_mut() {
                match map.as_lora_mut() {
                    Some(lora) => {
                        project_lora(lora, cfg)?;
                    }
                    None => normalize_dense(map)?,
                }
            }
            Ok(())
        }
    }
}
