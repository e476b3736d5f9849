//! Games and reference values shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shapley_royalty::{Coalition, CoalitionGame};

/// `v(∅) = 0`, every other coalition i.i.d. uniform on [-1, 1].
pub fn random_table(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..1usize << n).map(|b| if b == 0 { 0.0 } else { rng.random_range(-1.0..=1.0) }).collect()
}

pub fn table_game(n: usize, table: Vec<f64>) -> CoalitionGame {
    CoalitionGame::new(n, move |s: Coalition| table[s.bits() as usize])
}

pub fn additive(weights: Vec<f64>) -> CoalitionGame {
    CoalitionGame::new(weights.len(), move |s: Coalition| s.members().map(|i| weights[i]).sum::<f64>())
}

/// Players 0 and 1 hold left gloves, player 2 the right glove.
pub fn glove() -> CoalitionGame {
    CoalitionGame::new(3, |s: Coalition| {
        let left = s.contains(0) || s.contains(1);
        if left && s.contains(2) { 1.0 } else { 0.0 }
    })
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// Subset-weighted form: `sum_S |S|!(n-|S|-1)!/n! (v(S+i) - v(S))`, over
/// every subset by plain bit iteration.
pub fn weighted_subset_shapley(n: usize, table: &[f64]) -> Vec<f64> {
    let nf = factorial(n);
    (0..n)
        .map(|i| {
            (0..1usize << n)
                .filter(|s| s & (1 << i) == 0)
                .map(|s| {
                    let k = s.count_ones() as usize;
                    factorial(k) * factorial(n - k - 1) / nf * (table[s | (1 << i)] - table[s])
                })
                .sum()
        })
        .collect()
}
