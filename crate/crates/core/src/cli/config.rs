//! `RunConfig`: the TOML document behind `--config`, with flag overrides.
//!
//! Relative paths are resolved against the config file's directory (or the
//! working directory when no file is given) but echoed exactly as written,
//! so reports from relocated fixtures stay byte-identical.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mc::{EstimatorConfig, DEFAULT_PERMUTATIONS};
use crate::oracle::chain::DEFAULT_LATENT_SAMPLES;
use crate::oracle::{DensityEstimator, ModelKind, NoiseSchedule, OracleConfig};
use crate::rng;
use crate::royalty::Solver;
use crate::synthetic::ClusterScenario;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every random stream in the run.
    pub seed: u64,
    /// Owner data in `owner_id,label,x0,...` CSV.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    /// Tabulated game (`coalition,value`) used instead of a dataset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub game_table: Option<PathBuf>,
    pub out: PathBuf,
    pub baseline: BaselineSpec,
    pub oracle: ModelKind,
    pub density: DensitySpec,
    pub solver: SolverSpec,
    pub beta: BetaMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub event: Option<EventSpec>,
    pub ledger: LedgerSpec,
    pub simulate: SimulateSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dataset: None,
            game_table: None,
            out: PathBuf::from("out"),
            baseline: BaselineSpec::StandardNormal,
            oracle: ModelKind::default(),
            density: DensitySpec::default(),
            solver: SolverSpec::default(),
            beta: BetaMode::PermissionGame,
            event: None,
            ledger: LedgerSpec::default(),
            simulate: SimulateSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BaselineSpec {
    StandardNormal,
    /// A model of the configured oracle kind fit on every point in a dataset.
    Dataset { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Analytic,
    LatentMc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensitySpec {
    pub estimator: EstimatorKind,
    pub steps: usize,
    pub alpha: f64,
    /// Latent samples `K` per density estimate.
    pub samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for DensitySpec {
    fn default() -> Self {
        Self { estimator: EstimatorKind::Analytic, steps: 3, alpha: 0.9, samples: DEFAULT_LATENT_SAMPLES, seed: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Exact,
    Mc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSpec {
    pub kind: SolverKind,
    pub permutations: usize,
    pub truncation: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self { kind: SolverKind::Exact, permutations: DEFAULT_PERMUTATIONS, truncation: 0.0, seed: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum BetaMode {
    PermissionGame,
    Fixed { value: f64 },
}

impl std::str::FromStr for BetaMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "permission" | "permission_game" => Ok(BetaMode::PermissionGame),
            _ => s
                .parse::<f64>()
                .map(|value| BetaMode::Fixed { value })
                .map_err(|_| format!("expected `permission` or a number, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSpec {
    pub x: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SettleMode {
    Full,
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LedgerSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub mode: SettleMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for LedgerSpec {
    fn default() -> Self {
        Self { path: None, mode: SettleMode::Full, sample_size: None, seed: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fixture {
    /// Graded Gaussian clusters with a target event from the nearest one.
    Clusters,
    /// Two owners holding identical points.
    Duplicate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSpec {
    pub fixture: Fixture,
    pub scenario: ClusterScenario,
    pub transactions: usize,
    pub price: f64,
}

impl Default for SimulateSpec {
    fn default() -> Self {
        Self { fixture: Fixture::Clusters, scenario: ClusterScenario::default(), transactions: 1000, price: 1.0 }
    }
}

/// A config plus the directory its relative paths are resolved against.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub base: PathBuf,
}

impl Loaded {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }
}

pub fn parse(text: &str) -> Result<RunConfig> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

pub fn load(path: Option<&Path>) -> Result<Loaded> {
    match path {
        None => Ok(Loaded { config: RunConfig::default(), base: PathBuf::new() }),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
            let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
            Ok(Loaded { config: parse(&text)?, base })
        }
    }
}

impl RunConfig {
    /// Fills every seed left unset from the root seed, one stream per subsystem.
    pub fn resolve_seeds(&mut self) {
        let root = self.seed;
        self.solver.seed.get_or_insert_with(|| rng::derive_seed(root, "solver"));
        self.density.seed.get_or_insert_with(|| rng::derive_seed(root, "density"));
        self.ledger.seed.get_or_insert_with(|| rng::derive_seed(root, "settle"));
    }

    pub fn validate(&self) -> Result<()> {
        if self.solver.kind == SolverKind::Mc {
            self.estimator_config().validate()?;
        }
        if let BetaMode::Fixed { value } = self.beta {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::Config(format!("beta {value} outside [0, 1]")));
            }
        }
        if self.density.estimator == EstimatorKind::LatentMc {
            if self.density.samples == 0 {
                return Err(Error::Config("density.samples must be at least 1".into()));
            }
            NoiseSchedule::constant(self.density.steps, self.density.alpha)?;
        }
        if let Some(e) = &self.event {
            if e.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config("event coordinates must be finite".into()));
            }
        }
        if self.dataset.is_some() && self.game_table.is_some() {
            return Err(Error::Config("set either dataset or game_table, not both".into()));
        }
        Ok(())
    }

    fn estimator_config(&self) -> EstimatorConfig {
        EstimatorConfig {
            num_permutations: self.solver.permutations,
            seed: self.solver.seed.unwrap_or_default(),
            truncation_tolerance: self.solver.truncation,
        }
    }

    pub fn solver(&self) -> Solver {
        match self.solver.kind {
            SolverKind::Exact => Solver::Exact,
            SolverKind::Mc => Solver::MonteCarlo(self.estimator_config()),
        }
    }

    /// Solver whose Monte-Carlo streams are keyed by `key` under the solver seed.
    pub fn solver_for(&self, key: &str) -> Solver {
        match self.solver() {
            Solver::MonteCarlo(mut c) => {
                c.seed = rng::derive_seed(c.seed, key);
                Solver::MonteCarlo(c)
            }
            s => s,
        }
    }

    pub fn oracle_config(&self) -> Result<OracleConfig> {
        let estimator = match self.density.estimator {
            EstimatorKind::Analytic => DensityEstimator::Analytic,
            EstimatorKind::LatentMc => DensityEstimator::latent(
                NoiseSchedule::constant(self.density.steps, self.density.alpha)?,
                Some(self.density.samples),
                self.density.seed.unwrap_or_default(),
            ),
        };
        Ok(OracleConfig { kind: self.oracle, estimator })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let mut c = RunConfig::default();
        c.resolve_seeds();
        assert_eq!(parse(&c.to_toml().unwrap()).unwrap(), c);
    }

    #[test]
    fn parses_nested_sections() {
        let c = parse(
            r#"
            seed = 7
            dataset = "d.csv"
            oracle = { kind = "kde", bandwidth = 0.5 }
            beta = { mode = "fixed", value = 0.8 }
            [solver]
            kind = "mc"
            permutations = 500
            [event]
            x = [1.0, 2.0]
            label = "gogh"
            "#,
        )
        .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.oracle, ModelKind::Kde { bandwidth: Some(0.5) });
        assert_eq!(c.beta, BetaMode::Fixed { value: 0.8 });
        assert_eq!(c.solver.kind, SolverKind::Mc);
        assert_eq!(c.event.unwrap().label.as_deref(), Some("gogh"));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_ranges() {
        assert!(parse("sede = 1").is_err());
        let mut c = RunConfig { beta: BetaMode::Fixed { value: 1.5 }, ..RunConfig::default() };
        assert!(c.validate().is_err());
        c.beta = BetaMode::PermissionGame;
        c.solver.kind = SolverKind::Mc;
        c.solver.permutations = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn beta_flag_syntax() {
        assert_eq!("permission".parse::<BetaMode>().unwrap(), BetaMode::PermissionGame);
        assert_eq!("0.25".parse::<BetaMode>().unwrap(), BetaMode::Fixed { value: 0.25 });
        assert!("half".parse::<BetaMode>().is_err());
    }
}
