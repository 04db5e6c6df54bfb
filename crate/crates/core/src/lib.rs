//! Gaussian-descriptor out-of-distribution detection for imbalanced tabular data.
//!
//! A small MLP embeds each row into a latent space where every known class
//! is an isotropic Gaussian sphere `(μ_i, σ_i)`. Training alternates
//! network and descriptor updates; at test time a row whose score is
//! negative for every sphere is flagged out-of-distribution.

pub mod baselines;
pub mod data;
pub mod error;
pub mod gditd;
pub mod gradcheck;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};
