//! Shapley royalty shares for generative-model revenue attribution.
//!
//! Copyright owners are players in a cooperative game whose utility is the
//! log-likelihood a counterfactual model, trained on a coalition's data,
//! assigns to a generated sample. Shapley values of that game, clamped at
//! zero and normalized, give each owner's share of the sale price.
//!
//! Layout:
//! - [`game`]: coalitions, utility oracles and the memoized [`game::CoalitionGame`].
//! - [`exact`]: exact Shapley values (stratified and permutation forms) and LOO scores.
//! - [`mc`]: seeded permutation-sampling estimators.
//! - [`royalty`]: royalty shares, the developer permission game and `beta_data`.
//! - [`oracle`]: density-model utilities, the dataset format and the latent
//!   Monte-Carlo density estimator over a Gaussian diffusion chain.
//! - [`ledger`]: transaction log and settlement.
//! - [`synthetic`]: Gaussian-cluster fixtures used by `srs simulate` and the tests.

pub mod cli;
pub mod error;
pub mod exact;
pub mod game;
pub mod ledger;
pub mod mc;
pub mod numeric;
pub mod oracle;
pub mod rng;
pub mod royalty;
pub mod synthetic;

pub use error::{Error, Result};
pub use exact::{exact_shapley, exact_shapley_by_permutations, loo_scores, LooVector, Method, ShapleyVector};
pub use game::{coalition_from_members, subsets_excluding, Coalition, CoalitionGame, PlayerId, UtilityOracle};
pub use mc::{permutation_sample, permutation_sample_incremental, truncated_walk, EstimateReport, EstimatorConfig, IncrementalOracle};
pub use royalty::{developer_split, permission_shapley, relative_utility, srs, srs_from_game, DeveloperSplit, PermissionGame, Solver, SrsVector};
