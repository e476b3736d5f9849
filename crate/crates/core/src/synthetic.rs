//! Synthetic Gaussian-cluster owners, generation events and transactions.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::exact::exact_shapley;
use crate::game::{Coalition, CoalitionGame};
use crate::ledger::Transaction;
use crate::oracle::{fit_gaussian, log_density, DensityModel, GenerationEvent, OwnerDataset};
use crate::rng;
use crate::royalty::{srs, SrsVector};

/// Owners whose clusters sit at graded distances from a target cluster.
///
/// The public-domain baseline is a standard normal at the origin. Owner
/// clusters lie on the line `y = height`, owner `i` at distance
/// `offset + i * spacing` from the target cluster, with the row of owners
/// centered over the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterScenario {
    pub owners: usize,
    pub points_per_owner: usize,
    /// Standard deviation of every cluster, per coordinate.
    pub cluster_sd: f64,
    /// Distance between consecutive owner clusters along the grading axis.
    pub spacing: f64,
    /// Distance from the target cluster to owner 0's cluster.
    pub offset: f64,
    pub height: f64,
}

impl Default for ClusterScenario {
    fn default() -> Self {
        Self {
            owners: 4,
            points_per_owner: 100,
            cluster_sd: 1.0,
            spacing: 3.0,
            offset: 0.0,
            height: 15.0,
        }
    }
}

pub fn gaussian_cluster<R: Rng>(center: &[f64], sd: f64, count: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| center.iter().map(|c| c + sd * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect()
}

impl ClusterScenario {
    fn target_x(&self) -> f64 {
        -(self.offset + self.spacing * self.owners.saturating_sub(1) as f64) / 2.0
    }

    pub fn target_center(&self) -> [f64; 2] {
        [self.target_x(), self.height]
    }

    pub fn center(&self, i: usize) -> [f64; 2] {
        [self.target_x() + self.offset + self.spacing * i as f64, self.height]
    }

    /// Distance from the target cluster's center to owner `i`'s.
    pub fn distance(&self, i: usize) -> f64 {
        (self.offset + self.spacing * i as f64).abs()
    }

    pub fn partition(&self, seed: u64) -> Vec<OwnerDataset> {
        (0..self.owners)
            .map(|i| {
                let mut r = rng::stream(rng::derive_seed(seed, "owners"), i as u64);
                OwnerDataset::new(i, gaussian_cluster(&self.center(i), self.cluster_sd, self.points_per_owner, &mut r))
            })
            .collect()
    }

    /// A sample from the target cluster.
    pub fn target_event(&self, seed: u64) -> GenerationEvent {
        let mut r = rng::stream(rng::derive_seed(seed, "target"), 0);
        GenerationEvent::new(gaussian_cluster(&self.target_center(), self.cluster_sd, 1, &mut r).remove(0))
    }

    fn min_distance_in_sds(&self, x: &[f64]) -> f64 {
        (0..self.owners)
            .map(|i| {
                let c = self.center(i);
                ((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2)).sqrt() / self.cluster_sd
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Generic public-domain content: a baseline sample at least `sds`
    /// cluster standard deviations from every owner's cluster center.
    pub fn irrelevant_event(&self, seed: u64, sds: f64) -> GenerationEvent {
        let mut r = rng::stream(rng::derive_seed(seed, "irrelevant"), 0);
        for _ in 0..10_000 {
            let x = gaussian_cluster(&[0.0, 0.0], 1.0, 1, &mut r).remove(0);
            if self.min_distance_in_sds(&x) >= sds {
                return GenerationEvent::new(x);
            }
        }
        panic!("owner clusters leave no baseline mass {sds} standard deviations away");
    }

    /// Constant-price sales of samples drawn from the owners' pooled
    /// clusters, each carrying the exact royalty shares of the Gaussian
    /// density utility against the standard-normal baseline. Coalition
    /// models are fit once and shared by every event.
    pub fn attributed_transactions(&self, count: usize, price: f64, seed: u64) -> Result<Vec<Transaction>> {
        let partition = self.partition(seed);
        let n = partition.len();
        let models = (1..1u64 << n)
            .map(|bits| {
                let pooled: Vec<Vec<f64>> = Coalition::from_bits(bits).members().flat_map(|i| partition[i].points.clone()).collect();
                fit_gaussian(&pooled, 0.0)
            })
            .collect::<Result<Vec<_>>>()?;
        let baseline = DensityModel::standard_normal(2);
        (0..count)
            .map(|k| {
                let mut r = rng::stream(rng::derive_seed(seed, "sales"), k as u64);
                let owner = r.random_range(0..n);
                let x = gaussian_cluster(&self.center(owner), self.cluster_sd, 1, &mut r).remove(0);
                let base = log_density(&baseline, &x)?;
                let mut values = vec![0.0; 1 << n];
                for (b, m) in models.iter().enumerate() {
                    values[b + 1] = log_density(m, &x)? - base;
                }
                let game = CoalitionGame::uncached(n, move |s: Coalition| values[s.bits() as usize]);
                let shares = srs(&exact_shapley(&game)?);
                Ok(Transaction { id: format!("sale-{k:06}"), price, event: GenerationEvent::new(x), srs: Some(shares) })
            })
            .collect()
    }
}

/// Two owners holding the same points.
pub fn duplicate_partition(seed: u64, count: usize) -> Vec<OwnerDataset> {
    let mut r = rng::stream(rng::derive_seed(seed, "duplicate"), 0);
    let points = gaussian_cluster(&[1.0, -1.0], 1.0, count, &mut r);
    vec![OwnerDataset::new(0, points.clone()), OwnerDataset::new(1, points)]
}

/// Transactions at a constant price with royalty shares drawn from a
/// Dirichlet distribution whose concentrations are `weights`.
pub fn constant_price_transactions(count: usize, price: f64, weights: &[f64], seed: u64) -> Vec<Transaction> {
    let gammas: Vec<Gamma<f64>> = weights.iter().map(|&w| Gamma::new(w, 1.0).expect("positive concentration")).collect();
    (0..count)
        .map(|k| {
            let mut r = rng::stream(rng::derive_seed(seed, "transactions"), k as u64);
            let draws: Vec<f64> = gammas.iter().map(|g| g.sample(&mut r)).collect();
            let total: f64 = draws.iter().sum();
            let shares = draws.iter().map(|d| d / total).collect();
            let x = gaussian_cluster(&[0.0, 0.0], 1.0, 1, &mut r).remove(0);
            Transaction {
                id: format!("tx-{k:06}"),
                price,
                event: GenerationEvent::new(x),
                srs: Some(SrsVector { shares, degenerate: false }),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partitions_are_seeded() {
        let s = ClusterScenario::default();
        assert_eq!(s.partition(3), s.partition(3));
        assert_ne!(s.partition(3), s.partition(4));
        assert_eq!(s.partition(3).len(), 4);
        assert!(s.distance(0) < s.distance(1));
    }

    #[test]
    fn irrelevant_event_is_far() {
        let s = ClusterScenario::default();
        for seed in 0..20 {
            let e = s.irrelevant_event(seed, 10.0);
            assert!(s.min_distance_in_sds(&e.x) >= 10.0);
        }
    }

    #[test]
    fn attributed_sales_favor_a_nearby_cluster() {
        let s = ClusterScenario::default();
        let txs = s.attributed_transactions(200, 1.0, 2).unwrap();
        let mut checked = 0;
        for t in &txs {
            let shares = &t.srs.as_ref().unwrap().shares;
            assert!((shares.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            if let Some(i) = (0..s.owners).find(|&i| (t.event.x[0] - s.center(i)[0]).abs() < 0.5) {
                let top = (0..s.owners).max_by(|&a, &b| shares[a].total_cmp(&shares[b])).unwrap();
                assert_eq!(top, i, "event {:?} shares {shares:?}", t.event.x);
                checked += 1;
            }
        }
        assert!(checked > 20);
    }

    #[test]
    fn transactions_have_valid_shares() {
        let txs = constant_price_transactions(50, 2.0, &[1.0, 2.0, 3.0], 9);
        assert_eq!(txs.len(), 50);
        for t in &txs {
            t.srs.as_ref().unwrap().validate().unwrap();
        }
        assert_eq!(txs, constant_price_transactions(50, 2.0, &[1.0, 2.0, 3.0], 9));
    }
}
