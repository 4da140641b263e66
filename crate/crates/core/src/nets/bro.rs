use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::ops::{check_finite, relu, relu_backward, LayerNorm, LayerNormTape};
use super::Critic;
use crate::categorical::ValueSupport;
use crate::error::{check_shape, Result};
use crate::linear::{random_semi_orthogonal, LinearMap};
use crate::params::{join, Gradients, ParamVisitor, ParamVisitorMut, Parameterized};
use crate::rng::{self, Stream};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BroConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_blocks: usize,
    pub num_atoms: usize,
    pub v_min: f64,
    pub v_max: f64,
    pub ln_eps: f64,
}

impl Default for BroConfig {
    fn default() -> Self {
        Self {
            input_dim: 16,
            hidden_dim: 64,
            num_blocks: 2,
            num_atoms: 51,
            v_min: -1.0,
            v_max: 2.0,
            ln_eps: 1e-5,
        }
    }
}

/// `h' = h + LN(W2 ReLU(LN(W1 h)))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BroBlock<T> {
    pub w1: LinearMap<T>,
    pub norm1: LayerNorm<T>,
    pub w2: LinearMap<T>,
    pub norm2: LayerNorm<T>,
}

/// Residual MLP critic with layer normalization and a categorical head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BroCritic<T> {
    pub input: LinearMap<T>,
    pub input_norm: LayerNorm<T>,
    pub blocks: Vec<BroBlock<T>>,
    pub head: LinearMap<T>,
    pub support: ValueSupport<T>,
}

#[derive(Debug, Clone)]
struct BlockTape<T> {
    input: Array2<T>,
    ln1: LayerNormTape<T>,
    ln1_out: Array2<T>,
    act: Array2<T>,
    ln2: LayerNormTape<T>,
}

#[derive(Debug, Clone)]
pub struct BroTape<T> {
    x: Array2<T>,
    ln0: LayerNormTape<T>,
    ln0_out: Array2<T>,
    h0: Array2<T>,
    blocks: Vec<BlockTape<T>>,
    last: Array2<T>,
}

impl<T: Scalar> BroTape<T> {
    pub fn h0(&self) -> ArrayView2<'_, T> {
        self.h0.view()
    }

    /// Normalized (pre-affine) activations of every layer norm, in forward order.
    pub fn normalized(&self) -> Vec<ArrayView2<'_, T>> {
        let mut v = vec![self.ln0.normalized.view()];
        for b in &self.blocks {
            v.push(b.ln1.normalized.view());
            v.push(b.ln2.normalized.view());
        }
        v
    }
}

impl<T: Scalar> BroCritic<T> {
    /// Orthogonal weights, unit gains and zero shifts.
    pub fn new(cfg: &BroConfig, seed: u64) -> Result<Self> {
        let mut rng = rng::stream(seed, Stream::Weights);
        let d = cfg.hidden_dim;
        let eps = T::lit(cfg.ln_eps);
        let input = LinearMap::dense(random_semi_orthogonal(d, cfg.input_dim, &mut rng));
        let blocks = (0..cfg.num_blocks)
            .map(|_| BroBlock {
                w1: LinearMap::dense(random_semi_orthogonal(d, d, &mut rng)),
                norm1: LayerNorm::new(d, eps),
                w2: LinearMap::dense(random_semi_orthogonal(d, d, &mut rng)),
                norm2: LayerNorm::new(d, eps),
            })
            .collect();
        let head = LinearMap::dense(random_semi_orthogonal(cfg.num_atoms, d, &mut rng));
        Ok(Self {
            input,
            input_norm: LayerNorm::new(d, eps),
            blocks,
            head,
            support: ValueSupport::new(T::lit(cfg.v_min), T::lit(cfg.v_max), cfg.num_atoms)?,
        })
    }

    /// Redraws layer-norm gains in `[0.5, 1.5]` and shifts in `[-0.2, 0.2]`.
    pub fn randomize_norms(&mut self, rng: &mut rng::Rng) {
        let mut redraw = |ln: &mut LayerNorm<T>| {
            ln.gain.mapv_inplace(|_| T::one() + rng::uniform_sym(rng, 0.5));
            ln.shift.mapv_inplace(|_| rng::uniform_sym(rng, 0.2));
        };
        redraw(&mut self.input_norm);
        for b in &mut self.blocks {
            redraw(&mut b.norm1);
            redraw(&mut b.norm2);
        }
    }
}

impl<T: Scalar> Critic<T> for BroCritic<T> {
    type Tape = BroTape<T>;

    fn input_dim(&self) -> usize {
        self.input.d_in()
    }

    fn output_dim(&self) -> usize {
        self.head.d_out()
    }

    fn forward(&self, x: ArrayView2<'_, T>) -> Result<(Array2<T>, BroTape<T>)> {
        check_shape("bronet input", &[x.nrows(), self.input_dim()], x.shape())?;
        let x = x.to_owned();
        check_finite(&x, "bronet input")?;
        let (ln0_out, ln0) = self.input_norm.forward(&self.input.forward_unchecked(x.view()));
        let h0 = relu(&ln0_out);
        let mut h = h0.clone();
        let mut tapes = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (ln1_out, ln1) = b.norm1.forward(&b.w1.forward_unchecked(h.view()));
            let act = relu(&ln1_out);
            let (update, ln2) = b.norm2.forward(&b.w2.forward_unchecked(act.view()));
            let next = &h + &update;
            tapes.push(BlockTape {
                input: std::mem::replace(&mut h, next),
                ln1,
                ln1_out,
                act,
                ln2,
            });
        }
        let logits = self.head.forward_unchecked(h.view());
        check_finite(&logits, "bronet logits")?;
        Ok((
            logits,
            BroTape {
                x,
                ln0,
                ln0_out,
                h0,
                blocks: tapes,
                last: h,
            },
        ))
    }

    fn backward(&self, tape: &BroTape<T>, grad_out: ArrayView2<'_, T>) -> Gradients<T> {
        let mut grads = Gradients::new();
        let mut dh = self
            .head
            .backward(tape.last.view(), grad_out, true, "head", &mut grads)
            .expect("input gradient requested");
        for (l, (b, bt)) in self.blocks.iter().zip(&tape.blocks).enumerate().rev() {
            let p = format!("blocks.{l}");
            let d_w2 = b.norm2.backward(&bt.ln2, dh.view(), &join(&p, "norm2"), &mut grads);
            let d_act = b
                .w2
                .backward(bt.act.view(), d_w2.view(), true, &join(&p, "w2"), &mut grads)
                .expect("input gradient requested");
            let d_ln1 = relu_backward(&bt.ln1_out, d_act);
            let d_w1 = b.norm1.backward(&bt.ln1, d_ln1.view(), &join(&p, "norm1"), &mut grads);
            dh += &b
                .w1
                .backward(bt.input.view(), d_w1.view(), true, &join(&p, "w1"), &mut grads)
                .expect("input gradient requested");
        }
        let d_ln0 = relu_backward(&tape.ln0_out, dh);
        let d_in = self.input_norm.backward(&tape.ln0, d_ln0.view(), "input_norm", &mut grads);
        self.input
            .backward(tape.x.view(), d_in.view(), false, "input", &mut grads);
        grads
    }

    fn adaptable_maps_mut(&mut self) -> Vec<&mut LinearMap<T>> {
        self.blocks
            .iter_mut()
            .flat_map(|b| [&mut b.w1, &mut b.w2])
            .collect()
    }

    fn projected_maps_mut(&mut self) -> Vec<&mut LinearMap<T>> {
        self.adaptable_maps_mut()
    }

    fn projected_maps(&self) -> Vec<&LinearMap<T>> {
        self.blocks.iter().flat_map(|b| [&b.w1, &b.w2]).collect()
    }
}

impl<T: Scalar> Parameterized<T> for BroCritic<T> {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut ParamVisitor<'a, '_, T>) {
        self.input.visit_params(&join(prefix, "input"), f);
        self.input_norm.visit_params(&join(prefix, "input_norm"), f);
        for (l, b) in self.blocks.iter().enumerate() {
            let p = join(prefix, &format!("blocks.{l}"));
            b.w1.visit_params(&join(&p, "w1"), f);
            b.norm1.visit_params(&join(&p, "norm1"), f);
            b.w2.visit_params(&join(&p, "w2"), f);
            b.norm2.visit_params(&join(&p, "norm2"), f);
        }
        self.head.visit_params(&join(prefix, "head"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_, T>) {
        self.input.visit_params_mut(&join(prefix, "input"), f);
        self.input_norm.visit_params_mut(&join(prefix, "input_norm"), f);
        for (l, b) in self.blocks.iter_mut().enumerate() {
            let p = join(prefix, &format!("blocks.{l}"));
            b.w1.visit_params_mut(&join(&p, "w1"), f);
            b.norm1.visit_params_mut(&join(&p, "norm1"), f);
            b.w2.visit_params_mut(&join(&p, "w2"), f);
            b.norm2.visit_params_mut(&join(&p, "norm2"), f);
        }
        self.head.visit_params_mut(&join(prefix, "head"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear::gaussian;

    fn small() -> BroConfig {
        BroConfig {
            input_dim: 5,
            hidden_dim: 12,
            num_blocks: 2,
            num_atoms: 7,
            ..BroConfig::default()
        }
    }

    #[test]
    fn zero_update_maps_leave_residual_path() {
        let mut c = BroCritic::<f64>::new(&small(), 0).unwrap();
        for b in &mut c.blocks {
            if let LinearMap::Dense(d) = &mut b.w2 {
                d.weight.fill(0.0);
            }
        }
        let x: Array2<f64> = gaussian(4, 5, 1.0, &mut rng::stream(0, Stream::Noise));
        let (logits, tape) = c.forward(x.view()).unwrap();
        let direct = c.head.forward(tape.h0()).unwrap();
        assert!((&logits - &direct).iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn forward_is_deterministic() {
        let x: Array2<f64> = gaussian(3, 5, 1.0, &mut rng::stream(1, Stream::Noise));
        let a = BroCritic::<f64>::new(&small(), 9).unwrap().predict(x.view()).unwrap();
        let b = BroCritic::<f64>::new(&small(), 9).unwrap().predict(x.view()).unwrap();
        assert_eq!(a, b);
    }
}
