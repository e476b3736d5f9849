//! Royalty shares from Shapley values, and the developer's cut.
//!
//! Shares are Shapley values clamped at zero and normalized. The developer
//! fraction either comes from configuration or from a permission game in
//! which the developer is an extra player, without whom no coalition has
//! any value.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::exact::{exact_shapley, ShapleyVector};
use crate::game::{Coalition, CoalitionGame, UtilityOracle, MAX_PLAYERS};
use crate::mc::{permutation_sample, EstimatorConfig};
use crate::numeric::CompensatedSum;

/// `log p_S(x) - log p_0(x)`: utility beyond the public-domain baseline.
pub fn relative_utility(abs_utility: f64, baseline_utility: f64) -> Result<f64> {
    if !abs_utility.is_finite() {
        return Err(Error::NonFinite("absolute utility"));
    }
    if !baseline_utility.is_finite() {
        return Err(Error::NonFinite("baseline utility"));
    }
    Ok(abs_utility - baseline_utility)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SrsVector {
    pub shares: Vec<f64>,
    /// Every clamped Shapley value was zero; shares fell back to uniform.
    pub degenerate: bool,
}

impl SrsVector {
    pub fn len(&self) -> usize {
        self.shares.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shares.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.shares.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::Precondition("royalty share outside [0, 1]".into()));
        }
        let total: f64 = self.shares.iter().sum();
        if !self.shares.is_empty() && (total - 1.0).abs() > 1e-9 {
            return Err(Error::Precondition(format!("royalty shares sum to {total}")));
        }
        Ok(())
    }
}

pub fn srs(phi: &ShapleyVector) -> SrsVector {
    srs_from_values(&phi.values)
}

/// Clamp negatives to zero and normalize; uniform with the degenerate flag
/// when nothing positive remains.
pub fn srs_from_values(values: &[f64]) -> SrsVector {
    let n = values.len();
    let clamped: Vec<f64> = values.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    let total = clamped.iter().copied().collect::<CompensatedSum>().value();
    if total > 0.0 && total.is_finite() {
        SrsVector {
            shares: clamped.iter().map(|c| c / total).collect(),
            degenerate: false,
        }
    } else {
        SrsVector {
            shares: vec![1.0 / n as f64; n],
            degenerate: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Solver {
    #[default]
    Exact,
    MonteCarlo(EstimatorConfig),
}

/// Shapley values, their standard errors (Monte-Carlo only) and the derived
/// royalty shares.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionResult {
    pub phi: ShapleyVector,
    pub stderr: Option<Vec<f64>>,
    pub srs: SrsVector,
}

pub fn solve(game: &CoalitionGame, solver: &Solver) -> Result<(ShapleyVector, Option<Vec<f64>>)> {
    match solver {
        Solver::Exact => Ok((exact_shapley(game)?, None)),
        Solver::MonteCarlo(cfg) => {
            let r = permutation_sample(game, cfg)?;
            Ok((r.estimate, Some(r.stderr)))
        }
    }
}

pub fn srs_from_game(game: &CoalitionGame, solver: &Solver) -> Result<AttributionResult> {
    let (phi, stderr) = solve(game, solver)?;
    let srs = srs(&phi);
    Ok(AttributionResult { phi, stderr, srs })
}

/// Owners plus the developer, who takes index `n`.
pub struct PermissionGame {
    base: Arc<CoalitionGame>,
}

struct PermissionOracle {
    base: Arc<CoalitionGame>,
    developer: usize,
}

impl UtilityOracle for PermissionOracle {
    fn evaluate(&self, s: Coalition) -> Result<f64> {
        if s.contains(self.developer) {
            self.base.evaluate(s.without(self.developer))
        } else {
            Ok(0.0)
        }
    }
}

impl PermissionGame {
    /// Requires `v(∅) = 0` in the base game.
    pub fn new(base: Arc<CoalitionGame>) -> Result<Self> {
        if base.n() + 1 > MAX_PLAYERS {
            return Err(Error::TooManyPlayers { n: base.n() + 1, limit: MAX_PLAYERS });
        }
        let empty = base.evaluate(Coalition::EMPTY)?;
        if empty != 0.0 {
            return Err(Error::Precondition(format!(
                "permission game needs v(empty) = 0, got {empty}"
            )));
        }
        Ok(Self { base })
    }

    pub fn owners(&self) -> usize {
        self.base.n()
    }

    pub fn developer(&self) -> usize {
        self.base.n()
    }

    pub fn base(&self) -> &Arc<CoalitionGame> {
        &self.base
    }

    /// The augmented game over `n + 1` players. Base values are shared
    /// through the base game's cache.
    pub fn augmented(&self) -> CoalitionGame {
        CoalitionGame::new(
            self.base.n() + 1,
            PermissionOracle { base: Arc::clone(&self.base), developer: self.developer() },
        )
    }
}

/// Shapley values of the augmented game; the developer is the last entry.
pub fn permission_shapley(pg: &PermissionGame, solver: &Solver) -> Result<ShapleyVector> {
    Ok(solve(&pg.augmented(), solver)?.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeveloperSplit {
    pub beta_data: f64,
    pub developer_share: f64,
    /// Fraction of each sale owed to each owner; sums to `beta_data`.
    pub owner_payout_fractions: Vec<f64>,
    pub degenerate: bool,
}

impl DeveloperSplit {
    /// Split with a configured `beta_data` applied to owner royalty shares.
    pub fn fixed(beta_data: f64, owner_srs: &SrsVector) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta_data) {
            return Err(Error::Config(format!("beta_data {beta_data} outside [0, 1]")));
        }
        Ok(Self {
            beta_data,
            developer_share: 1.0 - beta_data,
            owner_payout_fractions: owner_srs.shares.iter().map(|s| beta_data * s).collect(),
            degenerate: owner_srs.degenerate,
        })
    }
}

/// `beta_data = 1 - SRS(developer)` in the permission game; owners split
/// `beta_data` in proportion to their shares in that game.
pub fn developer_split(pg: &PermissionGame, solver: &Solver) -> Result<DeveloperSplit> {
    let phi = permission_shapley(pg, solver)?;
    let aug = srs(&phi);
    let dev = pg.developer();
    let beta_data = 1.0 - aug.shares[dev];
    let owners = &aug.shares[..dev];
    let owner_total = owners.iter().copied().collect::<CompensatedSum>().value();
    let owner_payout_fractions = if owner_total > 0.0 {
        owners.iter().map(|s| beta_data * (s / owner_total)).collect()
    } else {
        vec![0.0; dev]
    };
    Ok(DeveloperSplit {
        beta_data,
        developer_share: 1.0 - beta_data,
        owner_payout_fractions,
        degenerate: aug.degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::Method;

    fn phi(values: Vec<f64>) -> ShapleyVector {
        ShapleyVector { values, method: Method::Stratified }
    }

    fn additive(w: Vec<f64>) -> Arc<CoalitionGame> {
        Arc::new(CoalitionGame::new(w.len(), move |s: Coalition| s.members().map(|i| w[i]).sum::<f64>()))
    }

    #[test]
    fn relative_utility_cases() {
        assert_eq!(relative_utility(-3.0, -3.0).unwrap(), 0.0);
        assert_eq!(relative_utility(-2.0, -5.0).unwrap(), 3.0);
        assert!(matches!(relative_utility(f64::NAN, 0.0), Err(Error::NonFinite(_))));
        assert!(matches!(relative_utility(0.0, f64::NEG_INFINITY), Err(Error::NonFinite(_))));
    }

    #[test]
    fn srs_cases() {
        let s = srs(&phi(vec![2.0, -1.0, 3.0]));
        assert_eq!(s.shares, vec![0.4, 0.0, 0.6]);
        assert!(!s.degenerate);

        let s = srs(&phi(vec![0.0, 0.0, 0.0]));
        assert_eq!(s.shares, vec![1.0 / 3.0; 3]);
        assert!(s.degenerate);

        assert_eq!(srs(&phi(vec![5.0])).shares, vec![1.0]);
        assert!(srs(&phi(vec![-1.0, -2.0])).degenerate);
    }

    #[test]
    fn srs_from_game_cases() {
        let r = srs_from_game(&additive(vec![2.0, 3.0]), &Solver::Exact).unwrap();
        assert!((r.srs.shares[0] - 0.4).abs() < 1e-15);
        assert!((r.srs.shares[1] - 0.6).abs() < 1e-15);
        assert!(r.stderr.is_none());
        assert_eq!(r.phi.method, Method::Stratified);

        let r = srs_from_game(&additive(vec![2.0, 3.0]), &Solver::MonteCarlo(EstimatorConfig::new(20, 1))).unwrap();
        assert_eq!(r.phi.method, Method::Estimated);
        assert_eq!(r.stderr, Some(vec![0.0, 0.0]));
    }

    #[test]
    fn permission_single_owner() {
        let u = 3.0;
        let base = Arc::new(CoalitionGame::new(1, move |s: Coalition| if s.is_empty() { 0.0 } else { u }));
        let pg = PermissionGame::new(base).unwrap();
        let v = permission_shapley(&pg, &Solver::Exact).unwrap().values;
        assert!((v[0] - u / 2.0).abs() < 1e-12 && (v[1] - u / 2.0).abs() < 1e-12);
        let split = developer_split(&pg, &Solver::Exact).unwrap();
        assert!((split.beta_data - 0.5).abs() < 1e-12);
        assert!((split.owner_payout_fractions[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn permission_two_additive_owners() {
        let pg = PermissionGame::new(additive(vec![2.0, 4.0])).unwrap();
        let v = permission_shapley(&pg, &Solver::Exact).unwrap().values;
        for (a, b) in v.iter().zip([1.0, 2.0, 3.0]) {
            assert!((a - b).abs() < 1e-12, "{v:?}");
        }
        let split = developer_split(&pg, &Solver::Exact).unwrap();
        assert!((split.beta_data - 0.5).abs() < 1e-12);
        assert!((split.developer_share - 0.5).abs() < 1e-12);
        assert!((split.owner_payout_fractions[0] - 1.0 / 6.0).abs() < 1e-12);
        assert!((split.owner_payout_fractions[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn permission_without_owners() {
        let pg = PermissionGame::new(Arc::new(CoalitionGame::new(0, |_: Coalition| 0.0))).unwrap();
        assert_eq!(permission_shapley(&pg, &Solver::Exact).unwrap().values, vec![0.0]);
    }

    #[test]
    fn permission_requires_zero_baseline() {
        let base = Arc::new(CoalitionGame::new(1, |_: Coalition| 1.0));
        assert!(matches!(PermissionGame::new(base), Err(Error::Precondition(_))));
    }

    #[test]
    fn fixed_beta() {
        let owner = SrsVector { shares: vec![0.25, 0.75], degenerate: false };
        let s = DeveloperSplit::fixed(0.8, &owner).unwrap();
        assert!((s.owner_payout_fractions[0] - 0.2).abs() < 1e-15);
        assert!((s.owner_payout_fractions[1] - 0.6).abs() < 1e-15);
        assert!((s.developer_share - 0.2).abs() < 1e-15);
        assert!(DeveloperSplit::fixed(1.5, &owner).is_err());
    }
}
