//! Bayesian conditional GANs at desk scale.
//!
//! The generator is a random function of a deterministic one-hot label: each
//! batch is produced by one draw of the generator's weights under Bernoulli
//! masking and additive Gaussian noise. The discriminator is a `K + 1`-way
//! classifier whose weights are perturbed the same way, so its predictions
//! carry a Monte Carlo predictive mean and variance. Training alternates
//! discriminator and generator updates by MAP over sampled functions
//! ([`trainer::train_step_mapmc`]) or stochastic gradient Langevin dynamics
//! ([`trainer::train_step_sgld`]), with a mean-feature discrepancy term on the
//! generator and a unit-norm projection on the discriminator.
//!
//! Monte Carlo sample loops run through [`exec::Exec`]; with the default
//! `parallel` feature they are spread over a rayon pool.

pub mod data;
pub mod error;
pub mod eval;
pub mod exec;
pub mod matrix;
pub mod nn;
pub mod objectives;
pub mod rng;
pub mod stochastic;
pub mod trainer;

pub use error::{Error, Result};
pub use exec::Exec;
pub use matrix::Matrix;
pub use rng::Rng;
