use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{check_shape, Error, Result};
use crate::params::{join, Gradients, ParamGroup, ParamVisitor, ParamVisitorMut, Parameterized};
use crate::Scalar;

/// Frozen base plus trainable low-rank residual:
/// `W_eff = W0 + (alpha / r) B A` with `A: r x d_in`, `B: d_out x r`.
///
/// Only `A` and `B` are registered as trainable; `W0` is reported as frozen
/// and never receives a gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraLinear<T> {
    pub base: Array2<T>,
    pub a: Array2<T>,
    pub b: Array2<T>,
    pub alpha: T,
}

impl<T: Scalar> LoraLinear<T> {
    pub fn new(base: Array2<T>, a: Array2<T>, b: Array2<T>, alpha: T) -> Result<Self> {
        let (d_out, d_in) = base.dim();
        let rank = a.nrows();
        if rank == 0 {
            return Err(Error::InvalidArgument("LoRA rank must be at least 1".into()));
        }
        check_shape("lora A", &[rank, d_in], a.shape())?;
        check_shape("lora B", &[d_out, rank], b.shape())?;
        Ok(Self { base, a, b, alpha })
    }

    pub fn rank(&self) -> usize {
        self.a.nrows()
    }

    pub fn scaling(&self) -> T {
        self.alpha / T::from_usize(self.rank()).expect("rank fits scalar")
    }

    /// `(alpha / r) B A`.
    pub fn delta(&self) -> Array2<T> {
        let mut d = self.b.dot(&self.a);
        let s = self.scaling();
        d.mapv_inplace(|x| x * s);
        d
    }

    pub fn effective_weight(&self) -> Array2<T> {
        &self.base + &self.delta()
    }

    pub(crate) fn forward(&self, x: ArrayView2<'_, T>) -> Array2<T> {
        let mut y = x.dot(&self.base.t());
        let low = x.dot(&self.a.t());
        let s = self.scaling();
        y.scaled_add(s, &low.dot(&self.b.t()));
        y
    }

    pub(crate) fn backward(
        &self,
        x: ArrayView2<'_, T>,
        grad_out: ArrayView2<'_, T>,
        want_input_grad: bool,
        prefix: &str,
        grads: &mut Gradients<T>,
    ) -> Option<Array2<T>> {
        let s = self.scaling();
        // dB = s G^T (x A^T), dA = s (G B)^T x
        let xa = x.dot(&self.a.t());
        let gb = grad_out.dot(&self.b);
        let mut grad_b = grad_out.t().dot(&xa);
        grad_b.mapv_inplace(|v| v * s);
        let mut grad_a = gb.t().dot(&x);
        grad_a.mapv_inplace(|v| v * s);
        grads.accumulate(join(prefix, "lora_a"), grad_a);
        grads.accumulate(join(prefix, "lora_b"), grad_b);
        want_input_grad.then(|| {
            let mut dx = grad_out.dot(&self.base);
            dx.scaled_add(s, &gb.dot(&self.a));
            dx
        })
    }
}

impl<T: Scalar> Parameterized<T> for LoraLinear<T> {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut ParamVisitor<'a, '_, T>) {
        f(&join(prefix, "base"), ParamGroup::Frozen, self.base.view().into_dyn());
        f(&join(prefix, "lora_a"), ParamGroup::Adapter, self.a.view().into_dyn());
        f(&join(prefix, "lora_b"), ParamGroup::Adapter, self.b.view().into_dyn());
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_, T>) {
        f(&join(prefix, "base"), ParamGroup::Frozen, self.base.view_mut().into_dyn());
        f(&join(prefix, "lora_a"), ParamGroup::Adapter, self.a.view_mut().into_dyn());
        f(&join(prefix, "lora_b"), ParamGroup::Adapter, self.b.view_mut().into_dyn());
    }
}
