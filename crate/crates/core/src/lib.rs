//! Item response theory inference: amortized variational inference with a
//! product-of-experts ability posterior, joint maximum likelihood,
//! marginal-likelihood EM with Gauss-Hermite quadrature and Hamiltonian Monte
//! Carlo, over classical and neural response models.

pub mod autodiff;
pub mod baselines;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod models;
pub mod nn;
pub mod posterior;
pub mod rng;
pub mod variational;

pub use error::{Error, Result};
