//! Linear maps without bias: dense, LoRA-adapted and pruned.

mod dense;
mod init;
mod lora;
mod pruned;

pub use dense::DenseLinear;
pub use init::{
    build_frozen_base, build_prune_mask, fan_in_uniform, gaussian, random_semi_orthogonal,
    rescale_rows, LoraInit,
};
pub use lora::LoraLinear;
pub use pruned::PrunedLinear;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{check_shape, Error, Result};
use crate::params::{Gradients, ParamVisitor, ParamVisitorMut, Parameterized};
use crate::rng::Rng;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LinearMap<T> {
    Dense(DenseLinear<T>),
    Lora(LoraLinear<T>),
    Pruned(PrunedLinear<T>),
}

/// Where a LoRA map's frozen base comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum BaseInit {
    /// Freeze the dense weight being replaced.
    KeepDense,
    /// Fresh base from [`build_frozen_base`] with the given row norm and rank
    /// (`None` means full rank).
    Rescaled { norm: f64, rank: Option<usize> },
    /// All-zero base, so `W = (alpha / r) B A` ("no base" ablation).
    Zero,
}

/// How to turn a dense map into a LoRA map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoraSpec {
    pub rank: usize,
    /// Defaults to `rank`, i.e. unit scaling.
    pub alpha: Option<f64>,
    pub init: LoraInit,
    pub base: BaseInit,
}

impl LoraSpec {
    pub fn new(rank: usize, init: LoraInit, base: BaseInit) -> Self {
        Self {
            rank,
            alpha: None,
            init,
            base,
        }
    }
}

impl<T: Scalar> LinearMap<T> {
    pub fn dense(weight: Array2<T>) -> Self {
        LinearMap::Dense(DenseLinear::new(weight))
    }

    pub fn d_out(&self) -> usize {
        self.weight_shape().0
    }

    pub fn d_in(&self) -> usize {
        self.weight_shape().1
    }

    fn weight_shape(&self) -> (usize, usize) {
        match self {
            LinearMap::Dense(m) => m.weight.dim(),
            LinearMap::Lora(m) => m.base.dim(),
            LinearMap::Pruned(m) => m.weight.dim(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LinearMap::Dense(_) => "dense",
            LinearMap::Lora(_) => "lora",
            LinearMap::Pruned(_) => "pruned",
        }
    }

    pub fn as_lora(&self) -> Option<&LoraLinear<T>> {
        match self {
            LinearMap::Lora(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_lora_mut(&mut self) -> Option<&mut LoraLinear<T>> {
        match self {
            LinearMap::Lora(m) => Some(m),
            _ => None,
        }
    }

    /// The matrix actually applied to inputs.
    pub fn effective_weight(&self) -> Array2<T> {
        match self {
            LinearMap::Dense(m) => m.weight.clone(),
            LinearMap::Lora(m) => m.effective_weight(),
            LinearMap::Pruned(m) => m.effective_weight(),
        }
    }

    /// `y = W_eff x` for a single vector.
    pub fn apply(&self, x: ArrayView1<'_, T>) -> Result<Array1<T>> {
        check_shape("linear apply", &[self.d_in()], x.shape())?;
        let row = x.insert_axis(Axis(0));
        Ok(self.forward_unchecked(row).index_axis_move(Axis(0), 0))
    }

    /// Batched apply: `x` holds one sample per row, result is `n x d_out`.
    pub fn forward(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>> {
        check_shape("linear forward", &[x.nrows(), self.d_in()], x.shape())?;
        Ok(self.forward_unchecked(x))
    }

    pub(crate) fn forward_unchecked(&self, x: ArrayView2<'_, T>) -> Array2<T> {
        match self {
            LinearMap::Dense(m) => m.forward(x),
            LinearMap::Lora(m) => m.forward(x),
            LinearMap::Pruned(m) => m.forward(x),
        }
    }

    /// Accumulates parameter gradients for `grad_out = dL/dy` into `grads`
    /// under `prefix`, and returns `dL/dx` when requested.
    pub fn backward(
        &self,
        x: ArrayView2<'_, T>,
        grad_out: ArrayView2<'_, T>,
        want_input_grad: bool,
        prefix: &str,
        grads: &mut Gradients<T>,
    ) -> Option<Array2<T>> {
        match self {
            LinearMap::Dense(m) => m.backward(x, grad_out, want_input_grad, prefix, grads),
            LinearMap::Lora(m) => m.backward(x, grad_out, want_input_grad, prefix, grads),
            LinearMap::Pruned(m) => m.backward(x, grad_out, want_input_grad, prefix, grads),
        }
    }

    /// Replaces a dense map by a LoRA map. Base draws come from `base_rng`,
    /// adapter draws from `adapter_rng`.
    pub fn to_lora(&self, spec: &LoraSpec, base_rng: &mut Rng, adapter_rng: &mut Rng) -> Result<Self> {
        let LinearMap::Dense(dense) = self else {
            return Err(Error::InvalidArgument(format!(
                "only dense maps can be LoRA-wrapped, got {}",
                self.kind()
            )));
        };
        let (d_out, d_in) = dense.weight.dim();
        if spec.rank == 0 {
            return Err(Error::InvalidArgument("LoRA rank must be at least 1".into()));
        }
        let base = match spec.base {
            BaseInit::KeepDense => dense.weight.clone(),
            BaseInit::Rescaled { norm, rank } => {
                build_frozen_base(d_out, d_in, rank.unwrap_or(d_out.min(d_in)), T::lit(norm), base_rng)?
            }
            BaseInit::Zero => Array2::zeros((d_out, d_in)),
        };
        let (a, b) = spec.init.sample(d_out, d_in, spec.rank, adapter_rng);
        let alpha = T::lit(spec.alpha.unwrap_or(spec.rank as f64));
        Ok(LinearMap::Lora(LoraLinear::new(base, a, b, alpha)?))
    }

    /// Replaces a dense map by a masked one with the given sparsity.
    pub fn to_pruned(&self, sparsity: f64, rng: &mut Rng) -> Result<Self> {
        let LinearMap::Dense(dense) = self else {
            return Err(Error::InvalidArgument(format!(
                "only dense maps can be pruned, got {}",
                self.kind()
            )));
        };
        let (d_out, d_in) = dense.weight.dim();
        let mask = build_prune_mask(d_out, d_in, sparsity, rng)?;
        Ok(LinearMap::Pruned(PrunedLinear::new(dense.weight.clone(), mask)?))
    }
}

impl<T: Scalar> Parameterized<T> for LinearMap<T> {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut ParamVisitor<'a, '_, T>) {
        match self {
            LinearMap::Dense(m) => m.visit_params(prefix, f),
            LinearMap::Lora(m) => m.visit_params(prefix, f),
            LinearMap::Pruned(m) => m.visit_params(prefix, f),
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_, T>) {
        match self {
            LinearMap::Dense(m) => m.visit_params_mut(prefix, f),
            LinearMap::Lora(m) => m.visit_params_mut(prefix, f),
            LinearMap::Pruned(m) => m.visit_params_mut(prefix, f),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use ndarray::{array, Array1};
    use proptest::prelude::*;

    fn lora(base: Array2<f64>, a: Array2<f64>, b: Array2<f64>, alpha: f64) -> LinearMap<f64> {
        LinearMap::Lora(LoraLinear::new(base, a, b, alpha).unwrap())
    }

    #[test]
    fn zero_b_effective_weight_is_base() {
        let mut rng = stream(0, Stream::Weights);
        let base: Array2<f64> = gaussian(5, 3, 1.0, &mut rng);
        let m = lora(base.clone(), gaussian(2, 3, 1.0, &mut rng), Array2::zeros((5, 2)), 2.0);
        assert_eq!(m.effective_weight(), base);
        assert_eq!(m.as_lora().unwrap().scaling(), 1.0);
    }

    #[test]
    fn outer_product_update() {
        let m = lora(
            Array2::zeros((2, 2)),
            array![[1.0, 0.0]],
            array![[2.0], [0.0]],
            1.0,
        );
        assert_eq!(m.effective_weight(), array![[2.0, 0.0], [0.0, 0.0]]);
    }

    #[test]
    fn lora_shape_errors() {
        assert!(LoraLinear::new(Array2::<f64>::zeros((2, 3)), Array2::zeros((1, 2)), Array2::zeros((2, 1)), 1.0).is_err());
        assert!(LoraLinear::new(Array2::<f64>::zeros((2, 3)), Array2::zeros((1, 3)), Array2::zeros((3, 1)), 1.0).is_err());
        assert!(LoraLinear::new(Array2::<f64>::zeros((2, 3)), Array2::zeros((0, 3)), Array2::zeros((2, 0)), 1.0).is_err());
    }

    #[test]
    fn apply_examples() {
        let mut rng = stream(1, Stream::Weights);
        let w: Array2<f64> = gaussian(4, 4, 1.0, &mut rng);
        let dense = LinearMap::dense(w.clone());
        let zero = Array1::zeros(4);
        assert_eq!(dense.apply(zero.view()).unwrap(), Array1::<f64>::zeros(4));

        let x: Array1<f64> = array![0.3, -1.0, 2.0, 0.5];
        let adapted = lora(w.clone(), gaussian(2, 4, 1.0, &mut rng), Array2::zeros((4, 2)), 2.0);
        assert_eq!(adapted.apply(x.view()).unwrap(), dense.apply(x.view()).unwrap());

        let identity = lora(Array2::eye(4), gaussian(1, 4, 1.0, &mut rng), Array2::zeros((4, 1)), 1.0);
        assert_eq!(identity.apply(x.view()).unwrap(), x);

        assert!(dense.apply(Array1::zeros(3).view()).is_err());
        assert!(dense.forward(Array2::zeros((2, 5)).view()).is_err());
    }

    #[test]
    fn pruned_apply_uses_masked_weight() {
        let m = LinearMap::Pruned(
            PrunedLinear::new(array![[1.0, 2.0], [3.0, 4.0]], array![[1.0, 0.0], [0.0, 1.0]]).unwrap(),
        );
        assert_eq!(m.apply(array![1.0, 1.0].view()).unwrap(), array![1.0, 4.0]);
    }

    #[test]
    fn backward_matches_closed_form() {
        // loss = 0.5 |W x|^2  =>  dL/dW = y x^T
        let mut rng = stream(2, Stream::Weights);
        let w: Array2<f64> = gaussian(3, 4, 1.0, &mut rng);
        let x: Array2<f64> = gaussian(1, 4, 1.0, &mut rng);
        let m = LinearMap::dense(w);
        let y = m.forward(x.view()).unwrap();
        let mut g = Gradients::new();
        m.backward(x.view(), y.view(), false, "l", &mut g);
        let expected = y.t().dot(&x);
        let got = g.get("l.weight").unwrap();
        assert!(got.iter().zip(expected.iter()).all(|(a, b)| (a - b).abs() < 1e-14));
    }

    #[test]
    fn lora_base_gets_no_gradient() {
        let mut rng = stream(3, Stream::Weights);
        let m = lora(gaussian(3, 4, 1.0, &mut rng), gaussian(2, 4, 1.0, &mut rng), gaussian(3, 2, 1.0, &mut rng), 2.0);
        let x: Array2<f64> = gaussian(5, 4, 1.0, &mut rng);
        let y = m.forward(x.view()).unwrap();
        let mut g = Gradients::new();
        m.backward(x.view(), y.view(), true, "l", &mut g);
        assert!(!g.contains("l.base"));
        assert!(g.contains("l.lora_a") && g.contains("l.lora_b"));
    }

    #[test]
    fn wrap_rank_bounds() {
        let mut rng = stream(4, Stream::Weights);
        let dense = LinearMap::dense(gaussian::<f64>(3, 5, 1.0, &mut rng));
        let mut r2 = stream(4, Stream::Adapters);
        let zero = LoraSpec::new(0, LoraInit::ZeroB, BaseInit::KeepDense);
        assert!(dense.to_lora(&zero, &mut rng, &mut r2).is_err());
        // over-complete ranks are allowed
        let wide = dense.to_lora(&LoraSpec::new(8, LoraInit::ZeroB, BaseInit::KeepDense), &mut rng, &mut r2).unwrap();
        assert_eq!(wide.effective_weight(), dense.effective_weight());
        let nobase = dense
            .to_lora(&LoraSpec::new(2, LoraInit::NormalBoth, BaseInit::Zero), &mut rng, &mut r2)
            .unwrap();
        let l = nobase.as_lora().unwrap();
        assert_eq!(nobase.effective_weight(), l.b.dot(&l.a));
    }

    proptest! {
        #[test]
        fn maps_are_linear(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let mut rng = stream(seed, Stream::Custom(0));
            let maps = [
                LinearMap::dense(gaussian(6, 5, 1.0, &mut rng)),
                lora(gaussian(6, 5, 1.0, &mut rng), gaussian(2, 5, 1.0, &mut rng), gaussian(6, 2, 1.0, &mut rng), 3.0),
                LinearMap::dense(gaussian(6, 5, 1.0, &mut rng)).to_pruned(0.5, &mut rng).unwrap(),
            ];
            let x: Array1<f64> = gaussian(1, 5, 1.0, &mut rng).row(0).to_owned();
            let y: Array1<f64> = gaussian(1, 5, 1.0, &mut rng).row(0).to_owned();
            for m in &maps {
                let lhs = m.apply((&x * a + &y * b).view()).unwrap();
                let rhs = m.apply(x.view()).unwrap() * a + m.apply(y.view()).unwrap() * b;
                let scale = lhs.iter().chain(rhs.iter()).fold(1.0f64, |s, v| s.max(v.abs()));
                for (l, r) in lhs.iter().zip(rhs.iter()) {
                    prop_assert!((l - r).abs() <= 1e-10 * scale);
                }
            }
        }
    }
}
