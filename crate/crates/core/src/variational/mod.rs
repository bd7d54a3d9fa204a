//! Variational inference for item response models.

pub mod gaussian;
pub mod train;
pub mod vibo;

pub use gaussian::{kl_diag_gaussian, poe_combine, reparam_sample, DiagGaussian};
pub use train::{fit_vibo, train, write_trace, TraceRecord, TrainConfig, VariationalFit};
pub use vibo::{Batch, BoundParts, Forward, ImportanceWeights, Noise, PosteriorFamily, VariationalModel};
