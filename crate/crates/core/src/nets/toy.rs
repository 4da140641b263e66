use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::ops::{relu, relu_backward};
use super::Critic;
use crate::categorical::ValueSupport;
use crate::error::{check_shape, Result};
use crate::linear::{fan_in_uniform, LinearMap};
use crate::params::{join, Gradients, ParamGroup, ParamVisitor, ParamVisitorMut, Parameterized};
use crate::rng::{self, Stream};
use crate::Scalar;

/// Output layer of the toy critic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ToyHead<T> {
    /// `w_out^T h`.
    Scalar(Array1<T>),
    /// `N x H` logits over a fixed support.
    Categorical {
        weight: Array2<T>,
        support: ValueSupport<T>,
    },
}

/// `Q(φ) = head(ReLU(W1 ReLU(W0 φ)))`, no biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyCritic<T> {
    pub layer0: LinearMap<T>,
    pub layer1: LinearMap<T>,
    pub head: ToyHead<T>,
}

#[derive(Debug, Clone)]
pub struct ToyTape<T> {
    input: Array2<T>,
    pre0: Array2<T>,
    hidden0: Array2<T>,
    pre1: Array2<T>,
    hidden1: Array2<T>,
}

impl<T: Scalar> ToyCritic<T> {
    /// Dense critic with fan-in uniform weights drawn from the run's
    /// `Weights` stream in the order `W0, W1, head`.
    pub fn dense(feature_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = rng::stream(seed, Stream::Weights);
        let w0 = fan_in_uniform(hidden, feature_dim, &mut rng);
        let w1 = fan_in_uniform(hidden, hidden, &mut rng);
        let w_out = fan_in_uniform(1, hidden, &mut rng).row(0).to_owned();
        Self {
            layer0: LinearMap::dense(w0),
            layer1: LinearMap::dense(w1),
            head: ToyHead::Scalar(w_out),
        }
    }

    /// Same hidden layers as [`ToyCritic::dense`], categorical output head.
    pub fn dense_categorical(
        feature_dim: usize,
        hidden: usize,
        support: ValueSupport<T>,
        seed: u64,
    ) -> Self {
        let mut c = Self::dense(feature_dim, hidden, seed);
        let mut rng = rng::stream(seed, Stream::Weights);
        // skip the three scalar-head draws so W0, W1 stay shared
        let _ = fan_in_uniform::<T>(hidden, feature_dim, &mut rng);
        let _ = fan_in_uniform::<T>(hidden, hidden, &mut rng);
        c.head = ToyHead::Categorical {
            weight: fan_in_uniform(support.len(), hidden, &mut rng),
            support,
        };
        c
    }

    pub fn hidden(&self) -> usize {
        self.layer0.d_out()
    }

    pub fn support(&self) -> Option<&ValueSupport<T>> {
        match &self.head {
            ToyHead::Scalar(_) => None,
            ToyHead::Categorical { support, .. } => Some(support),
        }
    }

    /// Scalar value per row: the head output, or the expected value of a categorical head.
    pub fn values(&self, x: ArrayView2<'_, T>) -> Result<Array1<T>> {
        let out = self.predict(x)?;
        match &self.head {
            ToyHead::Scalar(_) => Ok(out.column(0).to_owned()),
            ToyHead::Categorical { support, .. } => {
                let mut v = Array1::zeros(out.nrows());
                for (i, row) in out.rows().into_iter().enumerate() {
                    let p = crate::categorical::logits_to_probs(row)?;
                    v[i] = crate::categorical::expectation(&p, support);
                }
                Ok(v)
            }
        }
    }

    pub fn w_out(&self) -> Option<&Array1<T>> {
        match &self.head {
            ToyHead::Scalar(w) => Some(w),
            ToyHead::Categorical { .. } => None,
        }
    }

    pub fn w_out_mut(&mut self) -> Option<&mut Array1<T>> {
        match &mut self.head {
            ToyHead::Scalar(w) => Some(w),
            ToyHead::Categorical { .. } => None,
        }
    }
}

impl<T: Scalar> Critic<T> for ToyCritic<T> {
    type Tape = ToyTape<T>;

    fn input_dim(&self) -> usize {
        self.layer0.d_in()
    }

    fn output_dim(&self) -> usize {
        match &self.head {
            ToyHead::Scalar(_) => 1,
            ToyHead::Categorical { support, .. } => support.len(),
        }
    }

    fn forward(&self, x: ArrayView2<'_, T>) -> Result<(Array2<T>, ToyTape<T>)> {
        check_shape("toy critic input", &[x.nrows(), self.input_dim()], x.shape())?;
        let pre0 = self.layer0.forward_unchecked(x);
        let hidden0 = relu(&pre0);
        let pre1 = self.layer1.forward_unchecked(hidden0.view());
        let hidden1 = relu(&pre1);
        let out = match &self.head {
            ToyHead::Scalar(w) => hidden1.dot(w).insert_axis(Axis(1)),
            ToyHead::Categorical { weight, .. } => hidden1.dot(&weight.t()),
        };
        Ok((
            out,
            ToyTape {
                input: x.to_owned(),
                pre0,
                hidden0,
                pre1,
                hidden1,
            },
        ))
    }

    fn backward(&self, tape: &ToyTape<T>, grad_out: ArrayView2<'_, T>) -> Gradients<T> {
        let mut grads = Gradients::new();
        let d_hidden1 = match &self.head {
            ToyHead::Scalar(w) => {
                let g = grad_out.column(0);
                grads.accumulate("head.w_out".into(), tape.hidden1.t().dot(&g));
                g.insert_axis(Axis(1)).dot(&w.view().insert_axis(Axis(0)))
            }
            ToyHead::Categorical { weight, .. } => {
                grads.accumulate("head.weight".into(), grad_out.t().dot(&tape.hidden1));
                grad_out.dot(weight)
            }
        };
        let d_pre1 = relu_backward(&tape.pre1, d_hidden1);
        let d_hidden0 = self
            .layer1
            .backward(tape.hidden0.view(), d_pre1.view(), true, "layer1", &mut grads)
            .expect("input gradient requested");
        let d_pre0 = relu_backward(&tape.pre0, d_hidden0);
        self.layer0
            .backward(tape.input.view(), d_pre0.view(), false, "layer0", &mut grads);
        grads
    }

    fn adaptable_maps_mut(&mut self) -> Vec<&mut LinearMap<T>> {
        vec![&mut self.layer0, &mut self.layer1]
    }

    fn projected_maps_mut(&mut self) -> Vec<&mut LinearMap<T>> {
        vec![&mut self.layer0, &mut self.layer1]
    }

    fn projected_maps(&self) -> Vec<&LinearMap<T>> {
        vec![&self.layer0, &self.layer1]
    }
}

impl<T: Scalar> Parameterized<T> for ToyCritic<T> {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut ParamVisitor<'a, '_, T>) {
        self.layer0.visit_params(&join(prefix, "layer0"), f);
        self.layer1.visit_params(&join(prefix, "layer1"), f);
        match &self.head {
            ToyHead::Scalar(w) => f(&join(prefix, "head.w_out"), ParamGroup::Trainable, w.view().into_dyn()),
            ToyHead::Categorical { weight, .. } => {
                f(&join(prefix, "head.weight"), ParamGroup::Trainable, weight.view().into_dyn())
            }
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_, T>) {
        self.layer0.visit_params_mut(&join(prefix, "layer0"), f);
        self.layer1.visit_params_mut(&join(prefix, "layer1"), f);
        match &mut self.head {
            ToyHead::Scalar(w) => f(&join(prefix, "head.w_out"), ParamGroup::Trainable, w.view_mut().into_dyn()),
            ToyHead::Categorical { weight, .. } => f(
                &join(prefix, "head.weight"),
                ParamGroup::Trainable,
                weight.view_mut().into_dyn(),
            ),
        }
    }
}
