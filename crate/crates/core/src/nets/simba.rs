use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::ops::{check_finite, l2_normalize_backward, l2_normalize_rows, relu, relu_backward, scale_columns};
use super::Critic;
use crate::categorical::ValueSupport;
use crate::error::{check_shape, Result};
use crate::linear::{random_semi_orthogonal, rescale_rows, LinearMap};
use crate::params::{join, Gradients, ParamGroup, ParamVisitor, ParamVisitorMut, Parameterized};
use crate::rng::{self, Rng, Stream};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimbaConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_blocks: usize,
    pub num_atoms: usize,
    pub v_min: f64,
    pub v_max: f64,
    /// Constant coordinate appended to the input before normalization.
    pub c_shift: f64,
}

impl Default for SimbaConfig {
    fn default() -> Self {
        Self {
            input_dim: 16,
            hidden_dim: 64,
            num_blocks: 2,
            num_atoms: 51,
            v_min: -1.0,
            v_max: 2.0,
            c_shift: 1.0,
        }
    }
}

/// Inverted-bottleneck block followed by a learned interpolation back onto the sphere:
/// `h~ = norm(W2 ReLU(s ⊙ W1 h))`, `h' = norm((1 - β) ⊙ h + β ⊙ h~)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimbaBlock<T> {
    /// `4 d_h x d_h`.
    pub up: LinearMap<T>,
    /// `d_h x 4 d_h`.
    pub down: LinearMap<T>,
    pub scale: Array1<T>,
    pub beta: Array1<T>,
}

/// Hyperspherical residual critic with a categorical head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimbaCritic<T> {
    pub c_shift: T,
    pub embed: LinearMap<T>,
    pub embed_scale: Array1<T>,
    pub blocks: Vec<SimbaBlock<T>>,
    pub head: LinearMap<T>,
    pub support: ValueSupport<T>,
}

#[derive(Debug, Clone)]
struct BlockTape<T> {
    input: Array2<T>,
    up_pre: Array2<T>,
    scaled: Array2<T>,
    act: Array2<T>,
    down_norms: Array1<T>,
    branch: Array2<T>,
    mix_norms: Array1<T>,
    output: Array2<T>,
}

#[derive(Debug, Clone)]
pub struct SimbaTape<T> {
    augmented: Array2<T>,
    embed_pre: Array2<T>,
    embed_norms: Array1<T>,
    h0: Array2<T>,
    blocks: Vec<BlockTape<T>>,
}

impl<T: Scalar> SimbaTape<T> {
    /// `h^0, ..., h^L`.
    pub fn hidden_states(&self) -> Vec<ArrayView2<'_, T>> {
        std::iter::once(self.h0.view())
            .chain(self.blocks.iter().map(|b| b.output.view()))
            .collect()
    }
}

fn unit_rows<T: Scalar>(d_out: usize, d_in: usize, rng: &mut Rng) -> LinearMap<T> {
    let mut w = random_semi_orthogonal(d_out, d_in, rng);
    rescale_rows(&mut w, T::one()).expect("orthogonal rows are nonzero");
    LinearMap::dense(w)
}

impl<T: Scalar> SimbaCritic<T> {
    /// Unit-row weights, unit scales and `β = 1 / (L + 1)`.
    pub fn new(cfg: &SimbaConfig, seed: u64) -> Result<Self> {
        let mut rng = rng::stream(seed, Stream::Weights);
        let d = cfg.hidden_dim;
        let support = ValueSupport::new(T::lit(cfg.v_min), T::lit(cfg.v_max), cfg.num_atoms)?;
        let embed = unit_rows(d, cfg.input_dim + 1, &mut rng);
        let beta0 = T::lit(1.0 / (cfg.num_blocks as f64 + 1.0));
        let blocks = (0..cfg.num_blocks)
            .map(|_| SimbaBlock {
                up: unit_rows(4 * d, d, &mut rng),
                down: unit_rows(d, 4 * d, &mut rng),
                scale: Array1::ones(4 * d),
                beta: Array1::from_elem(d, beta0),
            })
            .collect();
        let head = unit_rows(cfg.num_atoms, d, &mut rng);
        Ok(Self {
            c_shift: T::lit(cfg.c_shift),
            embed,
            embed_scale: Array1::ones(d),
            blocks,
            head,
            support,
        })
    }

    /// Redraws scale vectors in `[0.5, 1.5]` and interpolation weights in `[0, 1]`.
    pub fn randomize_vectors(&mut self, rng: &mut Rng) {
        self.embed_scale.mapv_inplace(|_| T::one() + rng::uniform_sym(rng, 0.5));
        for b in &mut self.blocks {
            b.scale.mapv_inplace(|_| T::one() + rng::uniform_sym(rng, 0.5));
            b.beta.mapv_inplace(|_| T::lit(0.5) + rng::uniform_sym(rng, 0.5));
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.embed.d_out()
    }
}

impl<T: Scalar> Critic<T> for SimbaCritic<T> {
    type Tape = SimbaTape<T>;

    fn input_dim(&self) -> usize {
        self.embed.d_in() - 1
    }

    fn output_dim(&self) -> usize {
        self.head.d_out()
    }

    fn forward(&self, x: ArrayView2<'_, T>) -> Result<(Array2<T>, SimbaTape<T>)> {
        check_shape("simba input", &[x.nrows(), self.input_dim()], x.shape())?;
        check_finite(&x.to_owned(), "simba input")?;
        let shift = Array2::from_elem((x.nrows(), 1), self.c_shift);
        let (augmented, _) = l2_normalize_rows(&concatenate(Axis(1), &[x, shift.view()]).expect("rows agree"))?;
        let embed_pre = self.embed.forward_unchecked(augmented.view());
        let (h0, embed_norms) = l2_normalize_rows(&scale_columns(&embed_pre, self.embed_scale.view()))?;

        let mut h = h0.clone();
        let mut tapes = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let up_pre = block.up.forward_unchecked(h.view());
            let scaled = scale_columns(&up_pre, block.scale.view());
            let act = relu(&scaled);
            let down = block.down.forward_unchecked(act.view());
            let (branch, down_norms) = l2_normalize_rows(&down)?;
            let beta = block.beta.view().insert_axis(Axis(0));
            let mix = &h + &((&branch - &h) * &beta);
            let (output, mix_norms) = l2_normalize_rows(&mix)?;
            tapes.push(BlockTape {
                input: std::mem::replace(&mut h, output.clone()),
                up_pre,
                scaled,
                act,
                down_norms,
                branch,
                mix_norms,
                output,
            });
        }
        let logits = self.head.forward_unchecked(h.view());
        check_finite(&logits, "simba logits")?;
        Ok((
            logits,
            SimbaTape {
                augmented,
                embed_pre,
                embed_norms,
                h0,
                blocks: tapes,
            },
        ))
    }

    fn backward(&self, tape: &SimbaTape<T>, grad_out: ArrayView2<'_, T>) -> Gradients<T> {
        let mut grads = Gradients::new();
        let last = tape.blocks.last().map_or(&tape.h0, |b| &b.output);
        let mut dh = self
            .head
            .backward(last.view(), grad_out, true, "head", &mut grads)
            .expect("input gradient requested");

        for (l, (block, bt)) in self.blocks.iter().zip(&tape.blocks).enumerate().rev() {
            let p = format!("blocks.{l}");
            let d_mix = l2_normalize_backward(&bt.output, &bt.mix_norms, dh.view());
            grads.accumulate(join(&p, "beta"), (&d_mix * &(&bt.branch - &bt.input)).sum_axis(Axis(0)));
            let beta = block.beta.view().insert_axis(Axis(0));
            let d_branch = &d_mix * &beta;
            let mut d_input = &d_mix - &d_branch;
            let d_down = l2_normalize_backward(&bt.branch, &bt.down_norms, d_branch.view());
            let d_act = block
                .down
                .backward(bt.act.view(), d_down.view(), true, &join(&p, "down"), &mut grads)
                .expect("input gradient requested");
            let d_scaled = relu_backward(&bt.scaled, d_act);
            grads.accumulate(join(&p, "scale"), (&d_scaled * &bt.up_pre).sum_axis(Axis(0)));
            let d_up = scale_columns(&d_scaled, block.scale.view());
            d_input += &block
                .up
                .backward(bt.input.view(), d_up.view(), true, &join(&p, "up"), &mut grads)
                .expect("input gradient requested");
            dh = d_input;
        }

        let d_scaled = l2_normalize_backward(&tape.h0, &tape.embed_norms, dh.view());
        grads.accumulate("embed_scale".into(), (&d_scaled * &tape.embed_pre).sum_axis(Axis(0)));
        let d_pre = scale_columns(&d_scaled, self.embed_scale.view());
        self.embed
            .backward(tape.augmented.view(), d_pre.view(), false, "embed", &mut grads);
        grads
    }

    fn adaptable_maps_mut(&mut self) -> Vec<&mut LinearMap<T>> {
        self.blocks
            .iter_mut()
            .flat_map(|b| [&mut b.up, &mut b.down])
            .collect()
    }

    fn projected_maps_mut(&mut self) -> Vec<&mut LinearMap<T>> {
        let mut maps = vec![&mut self.embed];
        maps.extend(self.blocks.iter_mut().flat_map(|b| [&mut b.up, &mut b.down]));
        maps.push(&mut self.head);
        maps
    }

    fn projected_maps(&self) -> Vec<&LinearMap<T>> {
        let mut maps = vec![&self.embed];
        maps.extend(self.blocks.iter().flat_map(|b| [&b.up, &b.down]));
        maps.push(&self.head);
        maps
    }
}

impl<T: Scalar> Parameterized<T> for SimbaCritic<T> {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut ParamVisitor<'a, '_, T>) {
        self.embed.visit_params(&join(prefix, "embed"), f);
        f(&join(prefix, "embed_scale"), ParamGroup::Trainable, self.embed_scale.view().into_dyn());
        for (l, b) in self.blocks.iter().enumerate() {
            let p = join(prefix, &format!("blocks.{l}"));
            b.up.visit_params(&join(&p, "up"), f);
            b.down.visit_params(&join(&p, "down"), f);
            f(&join(&p, "scale"), ParamGroup::Trainable, b.scale.view().into_dyn());
            f(&join(&p, "beta"), ParamGroup::Trainable, b.beta.view().into_dyn());
        }
        self.head.visit_params(&join(prefix, "head"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_, T>) {
        self.embed.visit_params_mut(&join(prefix, "embed"), f);
        f(&join(prefix, "embed_scale"), ParamGroup::Trainable, self.embed_scale.view_mut().into_dyn());
        for (l, b) in self.blocks.iter_mut().enumerate() {
            let p = join(prefix, &format!("blocks.{l}"));
            b.up.visit_params_mut(&join(&p, "up"), f);
            b.down.visit_params_mut(&join(&p, "down"), f);
            f(&join(&p, "scale"), ParamGroup::Trainable, b.scale.view_mut().into_dyn());
            f(&join(&p, "beta"), ParamGroup::Trainable, b.beta.view_mut().into_dyn());
        }
        self.head.visit_params_mut(&join(prefix, "head"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear::{gaussian, BaseInit, LoraInit, LoraSpec};
    use crate::nets::lora_wrap;
    use crate::params::ParamRegistry;

    fn small() -> SimbaConfig {
        SimbaConfig {
            input_dim: 6,
            hidden_dim: 8,
            num_blocks: 2,
            num_atoms: 11,
            ..SimbaConfig::default()
        }
    }

    #[test]
    fn hidden_states_are_unit() {
        let mut c = SimbaCritic::<f64>::new(&small(), 0).unwrap();
        c.randomize_vectors(&mut rng::stream(0, Stream::Noise));
        let x: Array2<f64> = gaussian(5, 6, 3.0, &mut rng::stream(1, Stream::Noise));
        let (_, tape) = c.forward(x.view()).unwrap();
        assert_eq!(tape.hidden_states().len(), 3);
        for h in tape.hidden_states() {
            for row in h.rows() {
                assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn beta_extremes() {
        let x: Array2<f64> = gaussian(4, 6, 1.0, &mut rng::stream(2, Stream::Noise));
        let mut c = SimbaCritic::<f64>::new(&small(), 1).unwrap();
        for b in &mut c.blocks {
            b.beta.fill(0.0);
        }
        let (_, tape) = c.forward(x.view()).unwrap();
        for bt in &tape.blocks {
            assert!((&bt.output - &bt.input).iter().all(|v| v.abs() < 1e-15));
        }
        for b in &mut c.blocks {
            b.beta.fill(1.0);
        }
        let (_, tape) = c.forward(x.view()).unwrap();
        for bt in &tape.blocks {
            assert!((&bt.output - &bt.branch).iter().all(|v| v.abs() < 1e-15));
        }
    }

    #[test]
    fn lora_wraps_two_maps_per_block() {
        let cfg = SimbaConfig { hidden_dim: 64, ..small() };
        let dense = SimbaCritic::<f64>::new(&cfg, 3).unwrap();
        let r = 4;
        let spec = LoraSpec::new(r, LoraInit::NormalBoth, BaseInit::Rescaled { norm: 0.5, rank: None });
        let lora = lora_wrap(&dense, &spec, 3).unwrap();
        let wrapped = lora.projected_maps().iter().filter(|m| m.as_lora().is_some()).count();
        assert_eq!(wrapped, 4);
        assert_eq!(lora.embed, dense.embed);
        assert_eq!(lora.head, dense.head);
        let d = ParamRegistry::of(&dense).trainable_count();
        let l = ParamRegistry::of(&lora).trainable_count();
        assert_eq!(d - l, 2 * (8 * 64 * 64 - 2 * r * 5 * 64));
    }

    #[test]
    fn non_finite_input_rejected() {
        let c = SimbaCritic::<f64>::new(&small(), 0).unwrap();
        let mut x = Array2::zeros((1, 6));
        x[[0, 2]] = f64::NAN;
        assert!(c.forward(x.view()).is_err());
    }
}
