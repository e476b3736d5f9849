//! Desk-scale generative models that realize coalition utilities.

pub mod chain;
pub mod dataset;
pub mod density;
pub mod utility;

pub use chain::{gaussian_ddpm_chain, latent_mc_estimate, latent_mc_log_density, GaussianChain, NoiseSchedule, ReverseChain};
pub use dataset::{GenerationEvent, OwnerDataset};
pub use density::{fit_gaussian, fit_kde, log_density, DensityModel};
pub use utility::{coalition_utility, DensityEstimator, DensityUtility, ModelKind, OracleConfig};
