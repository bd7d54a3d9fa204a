//! Reference inference algorithms for the classical families.

pub mod classical;
pub mod em;
pub mod hmc;
pub mod mle;
pub mod quadrature;

pub use classical::{ClassicalLikelihood, ObservedCells};
pub use em::{em_e_step, em_m_step, fit_em, EStep, EmConfig, EmFit, EmTraceRecord, MStep};
pub use hmc::{hamiltonian, hmc_fit, hmc_sample, leapfrog, HmcConfig, IrtPosterior, Target};
pub use mle::{fit_mle, MleConfig, MleFit, PARAM_CLAMP};
pub use quadrature::{gauss_hermite_rule, QuadratureRule, DEFAULT_NODES};
