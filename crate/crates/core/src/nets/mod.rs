//! Critic networks: the chain-MDP MLP, a SimbaV2-style hyperspherical
//! critic and a BroNet-style residual critic, all built from [`LinearMap`]s.

mod bro;
mod loss;
pub mod ops;
mod simba;
mod toy;

pub use bro::{BroBlock, BroConfig, BroCritic, BroTape};
pub use loss::Objective;
pub use simba::{SimbaBlock, SimbaConfig, SimbaCritic, SimbaTape};
pub use toy::{ToyCritic, ToyHead, ToyTape};

use ndarray::{Array2, ArrayView2};

use crate::error::Result;
use crate::linear::{LinearMap, LoraSpec};
use crate::params::{Gradients, Parameterized};
use crate::rng::{self, Stream};
use crate::Scalar;

/// A differentiable critic with an explicit reverse pass.
pub trait Critic<T: Scalar>: Parameterized<T> + Clone {
    /// Activations recorded by [`Critic::forward`] for [`Critic::backward`].
    type Tape;

    fn input_dim(&self) -> usize;

    /// 1 for scalar heads, the atom count for categorical heads.
    fn output_dim(&self) -> usize;

    fn forward(&self, x: ArrayView2<'_, T>) -> Result<(Array2<T>, Self::Tape)>;

    /// Gradients of a loss for every trainable tensor, given `dL/d output`.
    /// Frozen tensors receive no entry.
    fn backward(&self, tape: &Self::Tape, grad_out: ArrayView2<'_, T>) -> Gradients<T>;

    fn predict(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>> {
        self.forward(x).map(|(y, _)| y)
    }

    /// Maps that LoRA wrapping and pruning replace (residual-block maps).
    fn adaptable_maps_mut(&mut self) -> Vec<&mut LinearMap<T>>;

    /// Weight matrices held on the unit hypersphere when projection is on.
    fn projected_maps_mut(&mut self) -> Vec<&mut LinearMap<T>>;

    fn projected_maps(&self) -> Vec<&LinearMap<T>>;
}

/// Copy of `critic` with every adaptable map replaced by a LoRA map.
///
/// Base draws use the run's `Base` stream and adapter draws its `Adapters`
/// stream, so the rest of the network is untouched.
pub fn lora_wrap<T: Scalar, C: Critic<T>>(critic: &C, spec: &LoraSpec, seed: u64) -> Result<C> {
    let mut out = critic.clone();
    let mut base_rng = rng::stream(seed, Stream::Base);
    let mut adapter_rng = rng::stream(seed, Stream::Adapters);
    for map in out.adaptable_maps_mut() {
        *map = map.to_lora(spec, &mut base_rng, &mut adapter_rng)?;
    }
    Ok(out)
}

/// Copy of `critic` with a fixed random mask on every adaptable map.
pub fn prune_wrap<T: Scalar, C: Critic<T>>(critic: &C, sparsity: f64, seed: u64) -> Result<C> {
    let mut out = critic.clone();
    let mut mask_rng = rng::stream(seed, Stream::Mask);
    for map in out.adaptable_maps_mut() {
        *map = map.to_pruned(sparsity, &mut mask_rng)?;
    }
    Ok(out)
}

/// Loss and analytic gradients in one call.
pub fn loss_and_gradients<T: Scalar, C: Critic<T>>(
    critic: &C,
    x: ArrayView2<'_, T>,
    objective: &Objective<T>,
) -> Result<(T, Gradients<T>)> {
    let (out, tape) = critic.forward(x)?;
    let (loss, grad_out) = objective.loss_and_grad(out.view())?;
    Ok((loss, critic.backward(&tape, grad_out.view())))
}
