//! Continual learning by replaying exemplars sampled from class-conditional
//! Gaussian mixtures, with per-task descriptor vectors injected into the
//! feature space.
//!
//! The numeric core is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar to `f64`, which is what the harness and CLI use.

pub mod cli;
pub mod conditioning;
pub mod config;
pub mod data;
pub mod error;
pub mod exact_json;
pub mod gmm;
pub mod learner;
pub mod metrics;
pub mod replay;
pub mod report;
pub mod scalar;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Real;

pub type GaussianMixture = gmm::GaussianMixture<f64>;
pub type GaussianMixtureF32 = gmm::GaussianMixture<f32>;
pub type GaussianComponent = gmm::GaussianComponent<f64>;
pub type TaskStream = data::TaskStream<f64>;
pub type TaskDataset = data::TaskDataset<f64>;
pub type Sample = data::Sample<f64>;
pub type TaskDescriptor = conditioning::TaskDescriptor<f64>;
pub type Exemplar = replay::Exemplar<f64>;
pub type ReplayBuffer = replay::ReplayBuffer<f64>;
pub type TaskGenerator = replay::TaskGenerator<f64>;
pub type SoftmaxModel = learner::SoftmaxModel<f64>;
pub type SoftmaxModelF32 = learner::SoftmaxModel<f32>;
