use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{check_shape, Result};
use crate::params::{join, Gradients, ParamGroup, ParamVisitor, ParamVisitorMut, Parameterized};
use crate::Scalar;

/// Dense map with a fixed binary mask. The map computes with `W ⊙ mask`, so
/// masked weights have no effect and receive zero gradient; they are also
/// kept at zero so the stored weight matches what the map computes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrunedLinear<T> {
    pub weight: Array2<T>,
    pub mask: Array2<T>,
}

impl<T: Scalar> PrunedLinear<T> {
    pub fn new(weight: Array2<T>, mask: Array2<T>) -> Result<Self> {
        check_shape("prune mask", weight.shape(), mask.shape())?;
        let mut m = Self { weight, mask };
        m.enforce_mask();
        Ok(m)
    }

    pub fn sparsity(&self) -> f64 {
        let zeros = self.mask.iter().filter(|&&m| m == T::zero()).count();
        zeros as f64 / self.mask.len() as f64
    }

    pub fn enforce_mask(&mut self) {
        Zip::from(&mut self.weight)
            .and(&self.mask)
            .for_each(|w, &m| *w = *w * m);
    }

    pub fn effective_weight(&self) -> Array2<T> {
        &self.weight * &self.mask
    }

    pub(crate) fn forward(&self, x: ArrayView2<'_, T>) -> Array2<T> {
        x.dot(&self.effective_weight().t())
    }

    pub(crate) fn backward(
        &self,
        x: ArrayView2<'_, T>,
        grad_out: ArrayView2<'_, T>,
        want_input_grad: bool,
        prefix: &str,
        grads: &mut Gradients<T>,
    ) -> Option<Array2<T>> {
        let g = grad_out.t().dot(&x) * &self.mask;
        grads.accumulate(join(prefix, "weight"), g);
        want_input_grad.then(|| grad_out.dot(&self.effective_weight()))
    }
}

impl<T: Scalar> Parameterized<T> for PrunedLinear<T> {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut ParamVisitor<'a, '_, T>) {
        f(&join(prefix, "weight"), ParamGroup::Trainable, self.weight.view().into_dyn());
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_, T>) {
        f(&join(prefix, "weight"), ParamGroup::Trainable, self.weight.view_mut().into_dyn());
    }
}
