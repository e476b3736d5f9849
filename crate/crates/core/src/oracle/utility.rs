//! Coalition utilities from density models fit on pooled owner data.

use std::collections::BTreeSet;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::chain::{gaussian_ddpm_chain, latent_mc_log_density, NoiseSchedule, DEFAULT_LATENT_SAMPLES};
use super::dataset::{validate_partition, GenerationEvent, OwnerDataset};
use super::density::{fit_gaussian, fit_kde, log_density, DensityModel};
use crate::error::{Error, Result};
use crate::game::{Coalition, UtilityOracle};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    GaussianMle {
        #[serde(default)]
        ridge: f64,
    },
    Kde {
        /// Scott's rule when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bandwidth: Option<f64>,
    },
}

impl Default for ModelKind {
    fn default() -> Self {
        ModelKind::GaussianMle { ridge: 0.0 }
    }
}

impl ModelKind {
    pub fn fit(&self, points: &[Vec<f64>]) -> Result<DensityModel> {
        match *self {
            ModelKind::GaussianMle { ridge } => fit_gaussian(points, ridge),
            ModelKind::Kde { bandwidth } => fit_kde(points, bandwidth),
        }
    }
}

/// How `log p_S(x)` is read off a fitted model.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum DensityEstimator {
    #[default]
    Analytic,
    /// Latent Monte-Carlo estimate through a Gaussian diffusion chain. Each
    /// coalition gets its own seed stream, so the oracle stays deterministic.
    LatentMc { schedule: NoiseSchedule, samples: usize, seed: u64 },
}

impl DensityEstimator {
    pub fn latent(schedule: NoiseSchedule, samples: Option<usize>, seed: u64) -> Self {
        DensityEstimator::LatentMc { schedule, samples: samples.unwrap_or(DEFAULT_LATENT_SAMPLES), seed }
    }

    fn log_density(&self, model: &DensityModel, x: &[f64], key: u64) -> Result<f64> {
        match self {
            DensityEstimator::Analytic => log_density(model, x),
            DensityEstimator::LatentMc { schedule, samples, seed } => {
                let chain = gaussian_ddpm_chain(model, schedule)?;
                latent_mc_log_density(&chain, x, *samples, rng::derive_seed_u64(*seed, key))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OracleConfig {
    pub kind: ModelKind,
    pub estimator: DensityEstimator,
}

/// `v(S) = log p_S(x | Q) - log p_0(x | Q)` where `p_S` is fit on the pooled
/// points of the owners in `S` (restricted to the event's label when it has
/// one) and `p_0` is the baseline model.
pub struct DensityUtility {
    partition: Vec<OwnerDataset>,
    event: GenerationEvent,
    cfg: OracleConfig,
    baseline_log_density: f64,
    fallbacks: Mutex<BTreeSet<Coalition>>,
}

/// Seed key reserved for the baseline model's latent estimate.
const BASELINE_KEY: u64 = u64::MAX;

pub fn coalition_utility(
    partition: Vec<OwnerDataset>,
    baseline: &DensityModel,
    event: GenerationEvent,
    cfg: OracleConfig,
) -> Result<DensityUtility> {
    let d = validate_partition(&partition)?;
    if event.x.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: event.x.len() });
    }
    if baseline.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: baseline.dim() });
    }
    if matches!(cfg.kind, ModelKind::Kde { .. }) && matches!(cfg.estimator, DensityEstimator::LatentMc { .. }) {
        return Err(Error::Config("latent Monte-Carlo estimation needs gaussian_mle models".into()));
    }
    let baseline_log_density = cfg.estimator.log_density(baseline, &event.x, BASELINE_KEY)?;
    if !baseline_log_density.is_finite() {
        return Err(Error::OracleFailure("baseline log density is not finite".into()));
    }
    Ok(DensityUtility {
        partition,
        event,
        cfg,
        baseline_log_density,
        fallbacks: Mutex::new(BTreeSet::new()),
    })
}

impl DensityUtility {
    pub fn n(&self) -> usize {
        self.partition.len()
    }

    pub fn baseline_log_density(&self) -> f64 {
        self.baseline_log_density
    }

    /// Coalitions whose owners had no points carrying the event's label, and
    /// were therefore fit on all of their points.
    pub fn fallback_coalitions(&self) -> Vec<Coalition> {
        self.fallbacks.lock().iter().copied().collect()
    }

    fn pooled(&self, s: Coalition, label: Option<&str>) -> Vec<Vec<f64>> {
        s.members()
            .flat_map(|i| {
                let ds = &self.partition[i];
                ds.points
                    .iter()
                    .zip(&ds.labels)
                    .filter(move |(_, l)| label.is_none_or(|q| l.as_deref() == Some(q)))
                    .map(|(p, _)| p.clone())
            })
            .collect()
    }

    /// Model fit on coalition `s`.
    pub fn fit(&self, s: Coalition) -> Result<DensityModel> {
        let mut points = self.pooled(s, self.event.conditioning.as_deref());
        if points.is_empty() && self.event.conditioning.is_some() {
            self.fallbacks.lock().insert(s);
            points = self.pooled(s, None);
        }
        if points.is_empty() {
            return Err(Error::OracleFailure(format!("coalition {s:?} has no training points")));
        }
        self.cfg.kind.fit(&points)
    }
}

impl UtilityOracle for DensityUtility {
    fn evaluate(&self, s: Coalition) -> Result<f64> {
        if s.is_empty() {
            return Ok(0.0);
        }
        let model = self.fit(s)?;
        let lp = self.cfg.estimator.log_density(&model, &self.event.x, s.bits())?;
        if !lp.is_finite() {
            return Err(Error::OracleFailure(format!("log density of coalition {s:?} is not finite")));
        }
        Ok(lp - self.baseline_log_density)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cluster(cx: f64, cy: f64) -> Vec<Vec<f64>> {
        [(-1.0, 0.0), (1.0, 0.0), (0.0, -1.0), (0.0, 1.0)].iter().map(|(dx, dy)| vec![cx + dx, cy + dy]).collect()
    }

    fn oracle(partition: Vec<OwnerDataset>, x: Vec<f64>) -> DensityUtility {
        coalition_utility(partition, &DensityModel::standard_normal(2), GenerationEvent::new(x), OracleConfig::default()).unwrap()
    }

    #[test]
    fn empty_coalition_is_zero() {
        let u = oracle(vec![OwnerDataset::new(0, cluster(0.0, 0.0))], vec![0.3, 0.1]);
        assert_eq!(u.evaluate(Coalition::EMPTY).unwrap(), 0.0);
    }

    #[test]
    fn identical_owners_give_identical_utilities() {
        let u = oracle(vec![OwnerDataset::new(0, cluster(2.0, 1.0)), OwnerDataset::new(1, cluster(2.0, 1.0))], vec![2.5, 1.0]);
        let a = u.evaluate(Coalition::from_bits(0b01)).unwrap();
        assert_eq!(a, u.evaluate(Coalition::from_bits(0b10)).unwrap());
        assert_eq!(a, u.evaluate(Coalition::from_bits(0b11)).unwrap());
    }

    #[test]
    fn near_cluster_beats_far_cluster() {
        // Each cluster's MLE fit is N(center, 0.5 I). At x = (0, 0):
        //   owner 0: -ln(2 pi 0.5) - 0 = -ln(pi)
        //   owner 1: -ln(pi) - |(8, 0)|^2 / (2 * 0.5) = -ln(pi) - 64
        // and the standard-normal baseline is -ln(2 pi).
        let u = oracle(vec![OwnerDataset::new(0, cluster(0.0, 0.0)), OwnerDataset::new(1, cluster(8.0, 0.0))], vec![0.0, 0.0]);
        let v0 = u.evaluate(Coalition::singleton(0)).unwrap();
        let v1 = u.evaluate(Coalition::singleton(1)).unwrap();
        let pi = std::f64::consts::PI;
        assert!((v0 - (-pi.ln() + (2.0 * pi).ln())).abs() < 1e-12);
        assert!((v1 - (-pi.ln() - 64.0 + (2.0 * pi).ln())).abs() < 1e-12);
        assert!(v0 > v1);
    }

    #[test]
    fn conditioning_filters_and_falls_back() {
        let mut a = OwnerDataset::labeled(0, cluster(0.0, 0.0), "style-a");
        a.points.extend(cluster(5.0, 5.0));
        a.labels.extend(vec![Some("style-b".to_string()); 4]);
        let b = OwnerDataset::labeled(1, cluster(-3.0, 0.0), "style-c");
        let event = GenerationEvent::conditioned(vec![0.0, 0.0], "style-a");
        let u = coalition_utility(vec![a, b], &DensityModel::standard_normal(2), event, OracleConfig::default()).unwrap();

        let only_a = fit_gaussian(&cluster(0.0, 0.0), 0.0).unwrap();
        let expected = log_density(&only_a, &[0.0, 0.0]).unwrap() - u.baseline_log_density();
        assert_eq!(u.evaluate(Coalition::singleton(0)).unwrap(), expected);
        assert!(u.fallback_coalitions().is_empty());

        u.evaluate(Coalition::singleton(1)).unwrap();
        assert_eq!(u.fallback_coalitions(), vec![Coalition::singleton(1)]);
    }

    #[test]
    fn single_label_conditioning_matches_unconditioned() {
        let p = vec![OwnerDataset::labeled(0, cluster(1.0, 0.0), "q"), OwnerDataset::labeled(1, cluster(0.0, 2.0), "q")];
        let base = DensityModel::standard_normal(2);
        let cond = coalition_utility(p.clone(), &base, GenerationEvent::conditioned(vec![0.5, 0.5], "q"), OracleConfig::default()).unwrap();
        let plain = coalition_utility(p, &base, GenerationEvent::new(vec![0.5, 0.5]), OracleConfig::default()).unwrap();
        for bits in 0..4 {
            let s = Coalition::from_bits(bits);
            assert_eq!(cond.evaluate(s).unwrap(), plain.evaluate(s).unwrap());
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let r = coalition_utility(
            vec![OwnerDataset::new(0, cluster(0.0, 0.0))],
            &DensityModel::standard_normal(2),
            GenerationEvent::new(vec![1.0]),
            OracleConfig::default(),
        );
        assert!(matches!(r, Err(Error::DimensionMismatch { expected: 2, got: 1 })));
    }

    #[test]
    fn empty_owner_is_oracle_failure() {
        let u = oracle(vec![OwnerDataset::new(0, cluster(0.0, 0.0)), OwnerDataset::new(1, vec![])], vec![0.0, 0.0]);
        assert!(matches!(u.evaluate(Coalition::singleton(1)), Err(Error::OracleFailure(_))));
        assert!(u.evaluate(Coalition::from_bits(0b11)).is_ok());
    }

    #[test]
    fn latent_estimator_is_deterministic_and_close() {
        let p = vec![OwnerDataset::new(0, cluster(0.5, 0.0)), OwnerDataset::new(1, cluster(0.0, 0.5))];
        let cfg = OracleConfig {
            kind: ModelKind::default(),
            estimator: DensityEstimator::latent(NoiseSchedule::constant(2, 0.8).unwrap(), Some(4000), 3),
        };
        let base = DensityModel::standard_normal(2);
        let ev = GenerationEvent::new(vec![0.2, 0.2]);
        let mc = coalition_utility(p.clone(), &base, ev.clone(), cfg.clone()).unwrap();
        let mc2 = coalition_utility(p.clone(), &base, ev.clone(), cfg).unwrap();
        let exact = coalition_utility(p, &base, ev, OracleConfig::default()).unwrap();
        for bits in 1..4 {
            let s = Coalition::from_bits(bits);
            let a = mc.evaluate(s).unwrap();
            assert_eq!(a, mc2.evaluate(s).unwrap());
            assert!((a - exact.evaluate(s).unwrap()).abs() < 0.1);
        }
    }
}
