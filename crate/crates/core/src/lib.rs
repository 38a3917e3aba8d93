//! Meta-learning for multi-objective reinforcement learning.
//!
//! A meta-policy is trained over a distribution of preference vectors with a
//! first-order meta-update, then fine-tuned into one policy per preference;
//! the resulting fronts are scored by hypervolume and dominance against an
//! independently trained radial baseline.
//!
//! The numeric modules are generic over [`Real`] (`f32` or `f64`); the
//! aliases below fix the double-precision types the harness and CLI use.

pub mod envs;
pub mod error;
pub mod harness;
pub mod meta;
pub mod nnet;
pub mod pareto;
pub mod real;
pub mod rl;
pub mod rng;
pub mod scalarize;

pub use error::{Error, Result};
pub use real::Real;
pub use rng::RngStream;

pub type Mlp = nnet::MlpParams<f64>;
pub type Policy = nnet::PolicyParams<f64>;
pub type Value = nnet::ValueParams<f64>;
pub type Preference = scalarize::PreferenceVector<f64>;
pub type Batch = rl::RolloutBatch<f64>;
pub type Archive = pareto::ParetoArchive<f64>;
pub type Trajectory = envs::Trajectory<f64>;
