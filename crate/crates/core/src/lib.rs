//! Low-rank critics on a chain MDP, plus the hyperspherical and categorical
//! machinery used to carry them into SimbaV2- and BroNet-style networks.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the bottom of this file pin the common choices.

pub mod categorical;
pub mod checks;
pub mod error;
pub mod gradcheck;
pub mod hypersphere;
pub mod linear;
pub mod nets;
pub mod optim;
pub mod params;
pub mod regimes;
pub mod rng;
mod scalar;
pub mod snapshot;
pub mod targets;
pub mod world;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type ToyCritic64 = nets::ToyCritic<f64>;
pub type ToyCritic32 = nets::ToyCritic<f32>;
pub type SimbaCritic64 = nets::SimbaCritic<f64>;
pub type SimbaCritic32 = nets::SimbaCritic<f32>;
pub type BroCritic64 = nets::BroCritic<f64>;
pub type BroCritic32 = nets::BroCritic<f32>;
pub type LoraLinear64 = linear::LoraLinear<f64>;
pub type LoraLinear32 = linear::LoraLinear<f32>;
pub type LinearMap64 = linear::LinearMap<f64>;
