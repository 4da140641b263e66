use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::params::{join, Gradients, ParamGroup, ParamVisitor, ParamVisitorMut, Parameterized};
use crate::Scalar;

/// `y = W x`, no bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLinear<T> {
    pub weight: Array2<T>,
    pub trainable: bool,
}

impl<T: Scalar> DenseLinear<T> {
    pub fn new(weight: Array2<T>) -> Self {
        Self {
            weight,
            trainable: true,
        }
    }

    pub fn frozen(weight: Array2<T>) -> Self {
        Self {
            weight,
            trainable: false,
        }
    }

    pub(crate) fn forward(&self, x: ArrayView2<'_, T>) -> Array2<T> {
        x.dot(&self.weight.t())
    }

    pub(crate) fn backward(
        &self,
        x: ArrayView2<'_, T>,
        grad_out: ArrayView2<'_, T>,
        want_input_grad: bool,
        prefix: &str,
        grads: &mut Gradients<T>,
    ) -> Option<Array2<T>> {
        if self.trainable {
            grads.accumulate(join(prefix, "weight"), grad_out.t().dot(&x));
        }
        want_input_grad.then(|| grad_out.dot(&self.weight))
    }
}

impl<T: Scalar> Parameterized<T> for DenseLinear<T> {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut ParamVisitor<'a, '_, T>) {
        let group = if self.trainable {
            ParamGroup::Trainable
        } else {
            ParamGroup::Frozen
        };
        f(&join(prefix, "weight"), group, self.weight.view().into_dyn());
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_, T>) {
        let group = if self.trainable {
            ParamGroup::Trainable
        } else {
            ParamGroup::Frozen
        };
        f(&join(prefix, "weight"), group, self.weight.view_mut().into_dyn());
    }
}
