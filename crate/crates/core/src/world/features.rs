use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use super::mdp::NUM_ACTIONS;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::Scalar;

/// Frozen random features `phi(s, a) = tanh(W_phi e_(s,a))`, where `e_(s,a)`
/// concatenates the one-hot state and action codes. The table is filled once.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    /// `D x (|S| + |A|)`, entries drawn with standard deviation `1/sqrt(D)`.
    pub projection: Array2<T>,
    /// Row `s * |A| + a` holds `phi(s, a)`.
    table: Array2<T>,
    num_states: usize,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn new(num_states: usize, dim: usize, seed: u64) -> Self {
        let mut rng = rng::stream(seed, Stream::Features);
        let std = 1.0 / (dim as f64).sqrt();
        let projection: Array2<T> = Array2::from_shape_simple_fn((dim, num_states + NUM_ACTIONS), || {
            rng::normal(&mut rng, std)
        });
        let table = Array2::from_shape_fn((num_states * NUM_ACTIONS, dim), |(row, k)| {
            let (s, a) = (row / NUM_ACTIONS, row % NUM_ACTIONS);
            (projection[[k, s]] + projection[[k, num_states + a]]).tanh()
        });
        Self {
            projection,
            table,
            num_states,
        }
    }

    pub fn dim(&self) -> usize {
        self.table.ncols()
    }

    pub fn one_hot_dim(&self) -> usize {
        self.projection.ncols()
    }

    pub fn row_index(&self, s: usize, a: usize) -> Result<usize> {
        if s >= self.num_states || a >= NUM_ACTIONS {
            return Err(Error::IndexOutOfRange(format!("(s={s}, a={a})")));
        }
        Ok(s * NUM_ACTIONS + a)
    }

    pub fn featurize(&self, s: usize, a: usize) -> Result<ArrayView1<'_, T>> {
        Ok(self.table.row(self.row_index(s, a)?))
    }

    /// All pairs, `(|S| |A|) x D`.
    pub fn table(&self) -> ArrayView2<'_, T> {
        self.table.view()
    }

    /// Recomputes `phi(s, a)` from the projection; used to check the table.
    pub fn recompute(&self, s: usize, a: usize) -> Array1<T> {
        let mut e = Array1::zeros(self.one_hot_dim());
        e[s] = T::one();
        e[self.num_states + a] = T::one();
        self.projection.dot(&e).mapv(T::tanh)
    }
}
