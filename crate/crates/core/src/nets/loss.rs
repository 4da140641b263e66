use ndarray::{Array1, Array2, ArrayView2};

use crate::categorical::{
    cross_entropy_loss, expectation_logit_grad, logits_to_probs, CategoricalDistribution,
    ValueSupport,
};
use crate::error::{check_shape, Result};
use crate::Scalar;

/// Batch-mean losses on a critic's raw output.
#[derive(Debug, Clone, PartialEq)]
pub enum Objective<T> {
    /// `½ mean (q - y)²` on a scalar head (`n x 1` output).
    Regression(Array1<T>),
    /// Mean cross-entropy of categorical logits against target distributions.
    CrossEntropy(Vec<CategoricalDistribution<T>>),
    /// `½ mean (E[z] - y)²` where `E[z]` is the expected value of the logits' softmax.
    ExpectedValue {
        support: ValueSupport<T>,
        targets: Array1<T>,
    },
}

impl<T: Scalar> Objective<T> {
    fn batch(&self) -> usize {
        match self {
            Objective::Regression(y) => y.len(),
            Objective::CrossEntropy(t) => t.len(),
            Objective::ExpectedValue { targets, .. } => targets.len(),
        }
    }

    /// Loss and its gradient with respect to `output`.
    pub fn loss_and_grad(&self, output: ArrayView2<'_, T>) -> Result<(T, Array2<T>)> {
        let n = self.batch();
        let inv_n = T::one() / T::from_usize(n).expect("batch fits scalar");
        match self {
            Objective::Regression(y) => {
                check_shape("regression output", &[n, 1], output.shape())?;
                let diff = &output.column(0) - y;
                let loss = diff.dot(&diff) * T::lit(0.5) * inv_n;
                let grad = diff.mapv(|d| d * inv_n).insert_axis(ndarray::Axis(1));
                Ok((loss, grad))
            }
            Objective::CrossEntropy(targets) => {
                check_shape("categorical output", &[n, output.ncols()], output.shape())?;
                let mut loss = T::zero();
                let mut grad = Array2::zeros(output.raw_dim());
                for (i, t) in targets.iter().enumerate() {
                    let (l, g) = cross_entropy_loss(output.row(i), t)?;
                    loss += l * inv_n;
                    grad.row_mut(i).assign(&g.mapv(|v| v * inv_n));
                }
                Ok((loss, grad))
            }
            Objective::ExpectedValue { support, targets } => {
                check_shape("categorical output", &[n, support.len()], output.shape())?;
                let mut loss = T::zero();
                let mut grad = Array2::zeros(output.raw_dim());
                for (i, &y) in targets.iter().enumerate() {
                    let p = logits_to_probs(output.row(i))?;
                    let q = p.probs.dot(&support.atoms());
                    let d = q - y;
                    loss += T::lit(0.5) * d * d * inv_n;
                    let g = expectation_logit_grad(p.probs.view(), support);
                    grad.row_mut(i).assign(&g.mapv(|v| v * d * inv_n));
                }
                Ok((loss, grad))
            }
        }
    }

    pub fn loss(&self, output: ArrayView2<'_, T>) -> Result<T> {
        self.loss_and_grad(output).map(|(l, _)| l)
    }
}
