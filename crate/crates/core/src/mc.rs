//! Permutation-sampling Shapley estimators.
//!
//! Permutation `k` under seed `s` is drawn from its own generator stream
//! `(s, k)`, and per-player statistics are reduced in permutation order, so
//! the estimate does not depend on how many threads run the walks.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{Method, ShapleyVector};
use crate::game::{Coalition, CoalitionGame, PlayerId};
use crate::rng;

pub const DEFAULT_PERMUTATIONS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub num_permutations: usize,
    pub seed: u64,
    /// Stop a walk once `|v(N) - v(prefix)| <= tol`. Zero disables truncation.
    pub truncation_tolerance: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            num_permutations: DEFAULT_PERMUTATIONS,
            seed: 0,
            truncation_tolerance: 0.0,
        }
    }
}

impl EstimatorConfig {
    pub fn new(num_permutations: usize, seed: u64) -> Self {
        Self { num_permutations, seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_permutations == 0 {
            return Err(Error::Config("num_permutations must be at least 1".into()));
        }
        if !(self.truncation_tolerance.is_finite() && self.truncation_tolerance >= 0.0) {
            return Err(Error::Config("truncation_tolerance must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub estimate: ShapleyVector,
    pub stderr: Vec<f64>,
    pub permutations_used: usize,
    /// Coalition evaluations requested by the walks (cache hits included).
    pub oracle_calls: u64,
}

/// Marginal contributions along one ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct Walk {
    /// Indexed by player, not by position in the ordering.
    pub marginals: Vec<f64>,
    /// Prefix evaluations performed, the empty prefix included. The grand
    /// coalition value used as the truncation target is not counted.
    pub oracle_calls: u64,
}

/// The `index`-th sampled ordering of `0..n` under `seed`.
pub fn sampled_ordering(seed: u64, index: u64, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, index));
    order
}

/// Walks the prefix chain of `ordering`, stopping early once the prefix
/// value is within `tol` of `v(N)`; players after that point get 0.
pub fn truncated_walk(game: &CoalitionGame, ordering: &[usize], tol: f64) -> Result<Walk> {
    let n = game.n();
    let mut marginals = vec![0.0; n];
    let target = if tol > 0.0 { Some(game.evaluate(game.grand())?) } else { None };
    let mut prefix = Coalition::EMPTY;
    let mut prev = game.evaluate(prefix)?;
    let mut calls = 1;
    for &p in ordering {
        if let Some(t) = target {
            if (t - prev).abs() <= tol {
                break;
            }
        }
        prefix = prefix.with(p);
        let cur = game.evaluate(prefix)?;
        calls += 1;
        marginals[p] = cur - prev;
        prev = cur;
    }
    Ok(Walk { marginals, oracle_calls: calls })
}

/// Model state advanced one player at a time, as when a model is fine-tuned
/// on one owner's data after another.
pub trait IncrementalOracle: Send + Sync {
    type State: Send;

    fn start(&self) -> Result<Self::State>;
    fn extend(&self, state: Self::State, player: PlayerId) -> Result<Self::State>;
    fn utility_of(&self, state: &Self::State) -> Result<f64>;
}

pub fn permutation_sample(game: &CoalitionGame, cfg: &EstimatorConfig) -> Result<EstimateReport> {
    cfg.validate()?;
    let n = game.n();
    let walks: Vec<Walk> = (0..cfg.num_permutations as u64)
        .into_par_iter()
        .map(|k| truncated_walk(game, &sampled_ordering(cfg.seed, k, n), cfg.truncation_tolerance))
        .collect::<Result<_>>()?;
    Ok(reduce(n, &walks))
}

/// Same estimator as [`permutation_sample`], evaluated by extending one model
/// state along each ordering: `n` extend steps and `n + 1` utility reads per
/// permutation.
pub fn permutation_sample_incremental<I: IncrementalOracle>(
    inc: &I,
    n: usize,
    cfg: &EstimatorConfig,
) -> Result<EstimateReport> {
    cfg.validate()?;
    let target = if cfg.truncation_tolerance > 0.0 {
        let mut state = inc.start()?;
        for p in 0..n {
            state = inc.extend(state, PlayerId(p))?;
        }
        Some(inc.utility_of(&state)?)
    } else {
        None
    };
    let walks: Vec<Walk> = (0..cfg.num_permutations as u64)
        .into_par_iter()
        .map(|k| {
            let order = sampled_ordering(cfg.seed, k, n);
            let mut marginals = vec![0.0; n];
            let mut state = inc.start()?;
            let mut prev = inc.utility_of(&state)?;
            let mut calls = 1;
            for &p in &order {
                if let Some(t) = target {
                    if (t - prev).abs() <= cfg.truncation_tolerance {
                        break;
                    }
                }
                state = inc.extend(state, PlayerId(p))?;
                let cur = inc.utility_of(&state)?;
                calls += 1;
                marginals[p] = cur - prev;
                prev = cur;
            }
            Ok(Walk { marginals, oracle_calls: calls })
        })
        .collect::<Result<_>>()?;
    Ok(reduce(n, &walks))
}

/// Per-player mean and standard error (unbiased variance), reduced in walk
/// order with Welford updates.
fn reduce(n: usize, walks: &[Walk]) -> EstimateReport {
    let mut mean = vec![0.0; n];
    let mut m2 = vec![0.0; n];
    for (k, w) in walks.iter().enumerate() {
        let count = (k + 1) as f64;
        for p in 0..n {
            let x = w.marginals[p];
            let delta = x - mean[p];
            mean[p] += delta / count;
            m2[p] += delta * (x - mean[p]);
        }
    }
    let m = walks.len();
    let stderr = m2
        .iter()
        .map(|&s| if m > 1 { (s / (m - 1) as f64).max(0.0).sqrt() / (m as f64).sqrt() } else { 0.0 })
        .collect();
    EstimateReport {
        estimate: ShapleyVector { values: mean, method: Method::Estimated },
        stderr,
        permutations_used: m,
        oracle_calls: walks.iter().map(|w| w.oracle_calls).sum(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn additive(w: Vec<f64>) -> CoalitionGame {
        CoalitionGame::new(w.len(), move |s: Coalition| s.members().map(|i| w[i]).sum::<f64>())
    }

    #[test]
    fn additive_game_is_exact_with_zero_stderr() {
        let w = vec![1.0, 2.0, 4.0];
        let r = permutation_sample(&additive(w.clone()), &EstimatorConfig::new(50, 3)).unwrap();
        assert_eq!(r.estimate.values, w);
        assert_eq!(r.stderr, vec![0.0; 3]);
        assert_eq!(r.permutations_used, 50);
        assert_eq!(r.oracle_calls, 50 * 4);
    }

    #[test]
    fn same_seed_same_report() {
        let g = CoalitionGame::new(4, |s: Coalition| (s.bits() as f64).sqrt());
        let cfg = EstimatorConfig::new(300, 99);
        assert_eq!(permutation_sample(&g, &cfg).unwrap(), permutation_sample(&g, &cfg).unwrap());
        let other = permutation_sample(&g, &EstimatorConfig::new(300, 100)).unwrap();
        assert_ne!(other, permutation_sample(&g, &cfg).unwrap());
    }

    #[test]
    fn zero_permutations_rejected() {
        let g = additive(vec![1.0]);
        assert!(permutation_sample(&g, &EstimatorConfig::new(0, 1)).is_err());
    }

    #[test]
    fn truncation_disabled_is_full_walk() {
        let g = additive(vec![1.0, 2.0, 3.0]);
        let w = truncated_walk(&g, &[2, 0, 1], 0.0).unwrap();
        assert_eq!(w.marginals, vec![1.0, 2.0, 3.0]);
        assert_eq!(w.oracle_calls, 4);
    }

    #[test]
    fn truncation_on_saturating_game() {
        let g = CoalitionGame::new(5, |s: Coalition| if s.is_empty() { 0.0 } else { 1.0 });
        let w = truncated_walk(&g, &[3, 0, 1, 2, 4], 1e-12).unwrap();
        assert_eq!(w.marginals, vec![0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(w.oracle_calls, 2);
    }

    #[test]
    fn truncation_never_fires_on_unit_additive() {
        // Prefix values 0,1,2,3 against v(N)=4: the gap never drops to 0.5
        // before the last player joins.
        let g = additive(vec![1.0; 4]);
        let w = truncated_walk(&g, &[1, 3, 0, 2], 0.5).unwrap();
        assert_eq!(w.marginals, vec![1.0; 4]);
        assert_eq!(w.oracle_calls, 5);
    }

    struct RunningSum(Vec<f64>);

    impl IncrementalOracle for RunningSum {
        type State = f64;
        fn start(&self) -> Result<f64> {
            Ok(0.0)
        }
        fn extend(&self, s: f64, p: PlayerId) -> Result<f64> {
            Ok(s + self.0[p.index()])
        }
        fn utility_of(&self, s: &f64) -> Result<f64> {
            Ok(*s)
        }
    }

    #[test]
    fn incremental_additive() {
        let r = permutation_sample_incremental(&RunningSum(vec![2.0, 0.5]), 2, &EstimatorConfig::new(10, 1)).unwrap();
        assert_eq!(r.estimate.values, vec![2.0, 0.5]);
        assert_eq!(r.stderr, vec![0.0, 0.0]);
        assert_eq!(r.oracle_calls, 30);
    }

    #[test]
    fn single_player_single_permutation() {
        let g = CoalitionGame::new(1, |s: Coalition| if s.is_empty() { -1.0 } else { 2.5 });
        let r = permutation_sample(&g, &EstimatorConfig::new(1, 0)).unwrap();
        assert_eq!(r.estimate.values, vec![3.5]);
        assert_eq!(r.stderr, vec![0.0]);
        let r = permutation_sample_incremental(&RunningSum(vec![3.5]), 1, &EstimatorConfig::new(1, 0)).unwrap();
        assert_eq!(r.estimate.values, vec![3.5]);
    }
}
