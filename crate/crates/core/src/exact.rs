//! Exact Shapley values and leave-one-out scores.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{subsets_excluding, Coalition, CoalitionGame, PlayerId};
use crate::numeric::{binomial, CompensatedSum};

/// Default player cap for [`exact_shapley`].
pub const EXACT_LIMIT: usize = 20;

/// Player cap for [`exact_shapley_by_permutations`].
pub const PERMUTATION_LIMIT: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Stratified,
    Permutation,
    Estimated,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Stratified => "stratified",
            Method::Permutation => "permutation",
            Method::Estimated => "estimated",
        }
    }
}

/// Per-player Shapley values in nats.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapleyVector {
    pub values: Vec<f64>,
    pub method: Method,
}

impl ShapleyVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.values.iter().copied().collect::<CompensatedSum>().value()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LooVector {
    pub values: Vec<f64>,
}

pub fn exact_shapley(game: &CoalitionGame) -> Result<ShapleyVector> {
    exact_shapley_with_limit(game, EXACT_LIMIT)
}

/// Stratified Shapley formula: for each player and each coalition size,
/// average the marginal contributions over all coalitions of that size, then
/// average the strata.
pub fn exact_shapley_with_limit(game: &CoalitionGame, limit: usize) -> Result<ShapleyVector> {
    let n = game.n();
    if n > limit || n >= crate::game::MAX_PLAYERS {
        return Err(Error::TooManyPlayers { n, limit });
    }
    let table = game.evaluate_all()?;
    let inv_binom: Vec<f64> = (0..n)
        .map(|k| {
            let b = binomial((n - 1) as u64, k as u64).expect("binomial fits below the player cap");
            1.0 / b as f64
        })
        .collect();

    let values = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut strata = CompensatedSum::new();
            for k in 1..=n {
                let mut stratum = CompensatedSum::new();
                for s in subsets_excluding(n, PlayerId(i), k - 1) {
                    stratum.add(table[s.with(i).bits() as usize] - table[s.bits() as usize]);
                }
                strata.add(stratum.value() * inv_binom[k - 1]);
            }
            strata.value() / n as f64
        })
        .collect();
    Ok(ShapleyVector { values, method: Method::Stratified })
}

/// Shapley values as the mean marginal contribution over all `n!`
/// orderings. Independent of the stratified route; used to cross-check it.
pub fn exact_shapley_by_permutations(game: &CoalitionGame) -> Result<ShapleyVector> {
    let n = game.n();
    if n > PERMUTATION_LIMIT {
        return Err(Error::TooManyPlayers { n, limit: PERMUTATION_LIMIT });
    }
    let table = game.evaluate_all()?;
    let mut sums = vec![CompensatedSum::new(); n];
    let mut count: u64 = 0;
    for_each_permutation(n, |order| {
        let mut prefix = Coalition::EMPTY;
        for &p in order {
            let next = prefix.with(p);
            sums[p].add(table[next.bits() as usize] - table[prefix.bits() as usize]);
            prefix = next;
        }
        count += 1;
    });
    let values = sums.iter().map(|s| s.value() / count as f64).collect();
    Ok(ShapleyVector { values, method: Method::Permutation })
}

/// Calls `f` on every permutation of `0..n` (Heap's algorithm).
pub fn for_each_permutation(n: usize, mut f: impl FnMut(&[usize])) {
    let mut a: Vec<usize> = (0..n).collect();
    let mut c = vec![0usize; n];
    f(&a);
    let mut i = 1;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            f(&a);
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

/// `v(N) - v(N \ {i})` for every player.
pub fn loo_scores(game: &CoalitionGame) -> Result<LooVector> {
    let grand = game.grand();
    let v_all = game.evaluate(grand)?;
    let values = (0..game.n())
        .map(|i| Ok(v_all - game.evaluate(grand.without(i))?))
        .collect::<Result<Vec<_>>>()?;
    Ok(LooVector { values })
}
