mod common;

use common::{additive, glove, random_table, table_game};
use shapley_royalty::mc::{sampled_ordering, truncated_walk};
use shapley_royalty::{
    exact_shapley, permutation_sample, permutation_sample_incremental, EstimatorConfig, IncrementalOracle, PlayerId, Result,
};

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

fn heap_permutations(n: usize) -> Vec<Vec<usize>> {
    fn go(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        for i in 0..k {
            go(k - 1, a, out);
            let j = if k.is_multiple_of(2) { i } else { 0 };
            a.swap(j, k - 1);
        }
    }
    let mut out = vec![];
    go(n, &mut (0..n).collect(), &mut out);
    out
}

#[test]
fn walks_over_every_ordering_average_to_the_exact_value() {
    for n in 1..=6 {
        let g = table_game(n, random_table(n, 40 + n as u64));
        let exact = exact_shapley(&g).unwrap();
        let perms = heap_permutations(n);
        let mut mean = vec![0.0; n];
        for p in &perms {
            let w = truncated_walk(&g, p, 0.0).unwrap();
            for (acc, m) in mean.iter_mut().zip(&w.marginals) {
                *acc += m / perms.len() as f64;
            }
        }
        for (i, (m, e)) in mean.iter().zip(&exact.values).enumerate() {
            assert!((m - e).abs() <= 1e-12, "n={n} player {i}");
        }
    }
}

#[test]
fn seed_average_is_unbiased() {
    let n = 5;
    let g = table_game(n, random_table(n, 7));
    let exact = exact_shapley(&g).unwrap();
    let seeds = 200;
    let mut mean = vec![0.0; n];
    let mut var = vec![0.0; n];
    for s in 0..seeds {
        let r = permutation_sample(&g, &EstimatorConfig::new(50, s)).unwrap();
        for i in 0..n {
            mean[i] += r.estimate.values[i] / seeds as f64;
            var[i] += r.stderr[i].powi(2) / (seeds as f64).powi(2);
        }
    }
    for i in 0..n {
        assert!((mean[i] - exact.values[i]).abs() <= 4.0 * var[i].sqrt(), "player {i}");
    }
}

#[test]
fn stderr_shrinks_like_inverse_root_m() {
    let g = table_game(6, random_table(6, 11));
    let a = permutation_sample(&g, &EstimatorConfig::new(1000, 2)).unwrap();
    let b = permutation_sample(&g, &EstimatorConfig::new(16000, 2)).unwrap();
    let exact = exact_shapley(&g).unwrap();
    for i in 0..6 {
        let ratio = a.stderr[i] / b.stderr[i];
        assert!((3.2..=4.8).contains(&ratio), "ratio {ratio}");
        assert!((b.estimate.values[i] - exact.values[i]).abs() <= 4.0 * b.stderr[i]);
    }
}

#[test]
fn estimates_do_not_depend_on_worker_count() {
    let g1 = table_game(7, random_table(7, 5));
    let g8 = table_game(7, random_table(7, 5));
    let cfg = EstimatorConfig { truncation_tolerance: 0.05, ..EstimatorConfig::new(3000, 99) };
    let one = in_pool(1, || permutation_sample(&g1, &cfg).unwrap());
    let many = in_pool(8, || permutation_sample(&g8, &cfg).unwrap());
    assert_eq!(one, many);
}

#[test]
fn orderings_are_uniform_over_permutations() {
    let mut counts = std::collections::HashMap::new();
    let draws = 24_000;
    for k in 0..draws {
        *counts.entry(sampled_ordering(3, k, 4)).or_insert(0usize) += 1;
    }
    assert_eq!(counts.len(), 24);
    for (_, c) in counts {
        // 1000 expected per ordering; 5 binomial standard deviations.
        assert!((c as f64 - 1000.0).abs() < 5.0 * (1000.0f64 * 23.0 / 24.0).sqrt());
    }
}

/// Glove game state: which glove kinds the prefix holds.
struct GloveState;

impl IncrementalOracle for GloveState {
    type State = (bool, bool);
    fn start(&self) -> Result<(bool, bool)> {
        Ok((false, false))
    }
    fn extend(&self, (l, r): (bool, bool), p: PlayerId) -> Result<(bool, bool)> {
        Ok(if p.index() == 2 { (l, true) } else { (true, r) })
    }
    fn utility_of(&self, s: &(bool, bool)) -> Result<f64> {
        Ok(if s.0 && s.1 { 1.0 } else { 0.0 })
    }
}

#[test]
fn incremental_chain_matches_coalition_walks() {
    let cfg = EstimatorConfig::new(5000, 17);
    let a = permutation_sample(&glove(), &cfg).unwrap();
    let b = permutation_sample_incremental(&GloveState, 3, &cfg).unwrap();
    assert_eq!(a.estimate.values, b.estimate.values);
    assert_eq!(a.stderr, b.stderr);
}

#[test]
fn glove_estimate_is_close() {
    let r = permutation_sample(&glove(), &EstimatorConfig::new(10_000, 1)).unwrap();
    for (v, e) in r.estimate.values.iter().zip([1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0]) {
        assert!((v - e).abs() <= 0.02);
    }
}

#[test]
fn truncation_keeps_efficiency_per_walk() {
    let g = additive(vec![1.0, 0.0, 0.0, 0.0]);
    let cfg = EstimatorConfig { truncation_tolerance: 1e-9, ..EstimatorConfig::new(400, 3) };
    let full = permutation_sample(&g, &EstimatorConfig::new(400, 3)).unwrap();
    let cut = permutation_sample(&g, &cfg).unwrap();
    assert_eq!(cut.estimate.values, vec![1.0, 0.0, 0.0, 0.0]);
    assert!(cut.oracle_calls < full.oracle_calls);
}
