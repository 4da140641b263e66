//! Row-wise building blocks with their backward passes. Every batch is
//! `n x d` with one sample per row.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{join, Gradients, ParamGroup, ParamVisitor, ParamVisitorMut, Parameterized};
use crate::Scalar;

pub fn relu<T: Scalar>(x: &Array2<T>) -> Array2<T> {
    x.mapv(|v| v.max(T::zero()))
}

/// `grad ⊙ 1[pre > 0]`.
pub fn relu_backward<T: Scalar>(pre: &Array2<T>, grad: Array2<T>) -> Array2<T> {
    let mut g = grad;
    Zip::from(&mut g).and(pre).for_each(|g, &p| {
        if p <= T::zero() {
            *g = T::zero();
        }
    });
    g
}

/// Divides each row by its L2 norm; returns the normalized rows and the norms.
pub fn l2_normalize_rows<T: Scalar>(x: &Array2<T>) -> Result<(Array2<T>, Array1<T>)> {
    let norms = x.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    if norms.iter().any(|&n| !(n > T::zero()) || !n.is_finite()) {
        return Err(Error::NonFinite("l2 normalization of a zero or non-finite row"));
    }
    let mut y = x.clone();
    for (mut row, &n) in y.rows_mut().into_iter().zip(norms.iter()) {
        row.mapv_inplace(|v| v / n);
    }
    Ok((y, norms))
}

/// Backward of `y = x / |x|`: `dx = (dy - y <y, dy>) / |x|`.
pub fn l2_normalize_backward<T: Scalar>(
    y: &Array2<T>,
    norms: &Array1<T>,
    grad: ArrayView2<'_, T>,
) -> Array2<T> {
    let mut dx = grad.to_owned();
    for ((mut row, y_row), &n) in dx.rows_mut().into_iter().zip(y.rows()).zip(norms.iter()) {
        let proj = y_row.dot(&row);
        Zip::from(&mut row).and(&y_row).for_each(|d, &yy| *d = (*d - yy * proj) / n);
    }
    dx
}

/// `x ⊙ s` with `s` broadcast over rows.
pub fn scale_columns<T: Scalar>(x: &Array2<T>, s: ArrayView1<'_, T>) -> Array2<T> {
    x * &s.insert_axis(Axis(0))
}

/// Per-feature layer normalization with learned gain and shift:
/// `y = g ⊙ (x - mean) / sqrt(var + eps) + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm<T> {
    pub gain: Array1<T>,
    pub shift: Array1<T>,
    pub eps: T,
}

/// Saved normalized activations and per-row standard deviations.
#[derive(Debug, Clone)]
pub struct LayerNormTape<T> {
    pub normalized: Array2<T>,
    pub std: Array1<T>,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn new(dim: usize, eps: T) -> Self {
        Self {
            gain: Array1::ones(dim),
            shift: Array1::zeros(dim),
            eps,
        }
    }

    /// The normalization alone, before gain and shift.
    pub fn normalize(&self, x: &Array2<T>) -> LayerNormTape<T> {
        let d = T::from_usize(x.ncols()).expect("width fits scalar");
        let mut normalized = x.clone();
        let mut std = Array1::zeros(x.nrows());
        for (mut row, s) in normalized.rows_mut().into_iter().zip(std.iter_mut()) {
            let mean = row.sum() / d;
            row.mapv_inplace(|v| v - mean);
            let var = row.dot(&row) / d;
            *s = (var + self.eps).sqrt();
            let sd = *s;
            row.mapv_inplace(|v| v / sd);
        }
        LayerNormTape { normalized, std }
    }

    pub fn forward(&self, x: &Array2<T>) -> (Array2<T>, LayerNormTape<T>) {
        let tape = self.normalize(x);
        let y = &tape.normalized * &self.gain.view().insert_axis(Axis(0))
            + &self.shift.view().insert_axis(Axis(0));
        (y, tape)
    }

    pub fn backward(
        &self,
        tape: &LayerNormTape<T>,
        grad: ArrayView2<'_, T>,
        prefix: &str,
        grads: &mut Gradients<T>,
    ) -> Array2<T> {
        grads.accumulate(join(prefix, "gain"), (&grad * &tape.normalized).sum_axis(Axis(0)));
        grads.accumulate(join(prefix, "shift"), grad.sum_axis(Axis(0)));
        let d = T::from_usize(grad.ncols()).expect("width fits scalar");
        let mut dx = &grad * &self.gain.view().insert_axis(Axis(0));
        for ((mut row, xh), &sd) in dx
            .rows_mut()
            .into_iter()
            .zip(tape.normalized.rows())
            .zip(tape.std.iter())
        {
            let mean_g = row.sum() / d;
            let mean_gx = row.dot(&xh) / d;
            Zip::from(&mut row)
                .and(&xh)
                .for_each(|g, &x| *g = (*g - mean_g - x * mean_gx) / sd);
        }
        dx
    }
}

impl<T: Scalar> Parameterized<T> for LayerNorm<T> {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut ParamVisitor<'a, '_, T>) {
        f(&join(prefix, "gain"), ParamGroup::Trainable, self.gain.view().into_dyn());
        f(&join(prefix, "shift"), ParamGroup::Trainable, self.shift.view().into_dyn());
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_, T>) {
        f(&join(prefix, "gain"), ParamGroup::Trainable, self.gain.view_mut().into_dyn());
        f(&join(prefix, "shift"), ParamGroup::Trainable, self.shift.view_mut().into_dyn());
    }
}

pub(crate) fn check_finite<T: Scalar>(x: &Array2<T>, what: &'static str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}
