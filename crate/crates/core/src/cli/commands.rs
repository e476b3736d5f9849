use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use serde::Serialize;

use super::config::{self, BaselineSpec, BetaMode, Fixture, SettleMode};
use super::report::{emit, num, write_durable};
use super::table::{read_table, table_game};
use super::{apply_overrides, Command, GlobalArgs, RunConfig};
use crate::error::{Error, Result};
use crate::exact::loo_scores;
use crate::game::{CoalitionGame, UtilityOracle};
use crate::ledger::{settle_full, settle_subsampled, Attributor, LedgerStore, Transaction, LOG_FILE, SNAPSHOT_FILE};
use crate::oracle::dataset::{load_partition, save_partition};
use crate::oracle::{coalition_utility, DensityModel, DensityUtility, GenerationEvent, OwnerDataset};
use crate::rng;
use crate::royalty::{developer_split, permission_shapley, srs, srs_from_game, PermissionGame, SrsVector};
use crate::synthetic::{constant_price_transactions, duplicate_partition};

pub struct Context {
    pub cfg: RunConfig,
    base: PathBuf,
    out_dir: PathBuf,
    ledger_dir: Option<PathBuf>,
    partition: OnceLock<Vec<OwnerDataset>>,
    baseline: OnceLock<DensityModel>,
}

/// A game for one event, with the density oracle behind it when there is one.
struct Built {
    game: Arc<CoalitionGame>,
    utility: Option<Arc<DensityUtility>>,
}

impl Context {
    pub fn new(g: &GlobalArgs, cmd: &Command) -> Result<Self> {
        let loaded = config::load(g.config.as_deref())?;
        let mut cfg = loaded.config.clone();
        apply_overrides(&mut cfg, g, cmd);
        cfg.resolve_seeds();
        cfg.validate()?;
        // Flag paths are relative to the working directory; config paths to the config file.
        let out_dir = match &g.out {
            Some(p) => p.clone(),
            None => loaded.resolve(&cfg.out),
        };
        let ledger_flag = match cmd {
            Command::Settle(s) => s.ledger.clone(),
            _ => None,
        };
        let ledger_dir = ledger_flag.or_else(|| cfg.ledger.path.as_ref().map(|p| loaded.resolve(p)));
        Ok(Self { cfg, base: loaded.base, out_dir, ledger_dir, partition: OnceLock::new(), baseline: OnceLock::new() })
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    fn partition(&self) -> Result<&Vec<OwnerDataset>> {
        if let Some(p) = self.partition.get() {
            return Ok(p);
        }
        let path = self.cfg.dataset.as_ref().ok_or_else(|| Error::Config("no dataset or game_table configured".into()))?;
        let p = load_partition(&self.resolve(path))?;
        Ok(self.partition.get_or_init(|| p))
    }

    fn baseline(&self, dim: usize) -> Result<&DensityModel> {
        if let Some(b) = self.baseline.get() {
            return Ok(b);
        }
        let model = match &self.cfg.baseline {
            BaselineSpec::StandardNormal => DensityModel::standard_normal(dim),
            BaselineSpec::Dataset { path } => {
                let pooled: Vec<Vec<f64>> = load_partition(&self.resolve(path))?.into_iter().flat_map(|d| d.points).collect();
                self.cfg.oracle.fit(&pooled)?
            }
        };
        Ok(self.baseline.get_or_init(|| model))
    }

    fn configured_event(&self) -> Option<GenerationEvent> {
        self.cfg.event.as_ref().map(|e| GenerationEvent { x: e.x.clone(), conditioning: e.label.clone() })
    }

    fn game_for(&self, event: Option<&GenerationEvent>) -> Result<Built> {
        if let Some(path) = &self.cfg.game_table {
            let path = self.resolve(path);
            let file = fs::File::open(&path).map_err(|e| Error::Config(format!("cannot open game table {}: {e}", path.display())))?;
            let (n, values) = read_table(std::io::BufReader::new(file))?;
            return Ok(Built { game: Arc::new(table_game(n, values)), utility: None });
        }
        let partition = self.partition()?;
        let event = event.ok_or_else(|| Error::Config("no event given (use --event or an [event] section)".into()))?;
        let dim = crate::oracle::dataset::partition_dim(partition)?;
        let utility = Arc::new(coalition_utility(partition.clone(), self.baseline(dim)?, event.clone(), self.cfg.oracle_config()?)?);
        let oracle: Arc<dyn UtilityOracle> = utility.clone();
        Ok(Built { game: Arc::new(CoalitionGame::from_arc(partition.len(), oracle)), utility: Some(utility) })
    }

    fn owners(&self) -> Result<Option<usize>> {
        if self.cfg.game_table.is_some() {
            return Ok(Some(self.game_for(None)?.game.n()));
        }
        if self.cfg.dataset.is_some() {
            return Ok(Some(self.partition()?.len()));
        }
        Ok(None)
    }
}

#[derive(Serialize)]
struct AttributeResult {
    method: &'static str,
    degenerate: bool,
    grand_value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    baseline_log_density: Option<f64>,
    /// Coalitions fit on all their points because none matched the label.
    fallback_coalitions: Vec<Vec<usize>>,
    oracle_evaluations: u64,
}

fn fallbacks(b: &Built) -> Vec<Vec<usize>> {
    b.utility.as_ref().map_or_else(Vec::new, |u| u.fallback_coalitions().iter().map(|c| c.members().collect()).collect())
}

pub fn attribute(ctx: &Context) -> Result<()> {
    let b = ctx.game_for(ctx.configured_event().as_ref())?;
    let r = srs_from_game(&b.game, &ctx.cfg.solver())?;
    let loo = loo_scores(&b.game)?;
    let mut csv = String::from("owner_id,phi,stderr,loo,srs\n");
    for i in 0..b.game.n() {
        let se = r.stderr.as_ref().map_or_else(String::new, |s| num(s[i]));
        writeln!(csv, "{i},{},{se},{},{}", num(r.phi.values[i]), num(loo.values[i]), num(r.srs.shares[i])).unwrap();
    }
    let result = AttributeResult {
        method: r.phi.method.as_str(),
        degenerate: r.srs.degenerate,
        grand_value: b.game.evaluate(b.game.grand())?,
        baseline_log_density: b.utility.as_ref().map(|u| u.baseline_log_density()),
        fallback_coalitions: fallbacks(&b),
        oracle_evaluations: b.game.eval_count(),
    };
    emit(&ctx.out_dir, "attribution", &csv, &ctx.cfg, &result)
}

#[derive(Serialize)]
struct DeveloperResult {
    method: &'static str,
    beta_data: f64,
    developer_share: f64,
    degenerate: bool,
    fallback_coalitions: Vec<Vec<usize>>,
}

pub fn developer_share(ctx: &Context) -> Result<()> {
    if ctx.cfg.beta != BetaMode::PermissionGame {
        return Err(Error::Config("developer-share needs beta mode `permission`".into()));
    }
    let b = ctx.game_for(ctx.configured_event().as_ref())?;
    let pg = PermissionGame::new(b.game.clone())?;
    let solver = ctx.cfg.solver();
    let phi = permission_shapley(&pg, &solver)?;
    let shares = srs(&phi);
    let split = developer_split(&pg, &solver)?;
    let mut csv = String::from("party,phi,srs,payout_fraction\n");
    for i in 0..pg.owners() {
        writeln!(csv, "{i},{},{},{}", num(phi.values[i]), num(shares.shares[i]), num(split.owner_payout_fractions[i])).unwrap();
    }
    let d = pg.developer();
    writeln!(csv, "developer,{},{},{}", num(phi.values[d]), num(shares.shares[d]), num(split.developer_share)).unwrap();
    let result = DeveloperResult {
        method: phi.method.as_str(),
        beta_data: split.beta_data,
        developer_share: split.developer_share,
        degenerate: split.degenerate,
        fallback_coalitions: fallbacks(&b),
    };
    emit(&ctx.out_dir, "developer_share", &csv, &ctx.cfg, &result)
}

#[derive(Serialize)]
struct CompareResult {
    method: &'static str,
    grand_value: f64,
    max_abs_difference: f64,
}

pub fn compare_loo(ctx: &Context) -> Result<()> {
    let b = ctx.game_for(ctx.configured_event().as_ref())?;
    let r = srs_from_game(&b.game, &ctx.cfg.solver())?;
    let loo = loo_scores(&b.game)?;
    let mut csv = String::from("owner_id,phi,loo,srs\n");
    let mut gap = 0.0f64;
    for i in 0..b.game.n() {
        gap = gap.max((r.phi.values[i] - loo.values[i]).abs());
        writeln!(csv, "{i},{},{},{}", num(r.phi.values[i]), num(loo.values[i]), num(r.srs.shares[i])).unwrap();
    }
    let result = CompareResult { method: r.phi.method.as_str(), grand_value: b.game.evaluate(b.game.grand())?, max_abs_difference: gap };
    emit(&ctx.out_dir, "compare_loo", &csv, &ctx.cfg, &result)
}

/// Stored shares first; transactions without them are attributed from the
/// configured dataset, each with its own solver stream.
struct ConfiguredAttributor<'a> {
    ctx: &'a Context,
    owners: usize,
}

impl Attributor for ConfiguredAttributor<'_> {
    fn owners(&self) -> usize {
        self.owners
    }

    fn attribute(&self, tx: &Transaction) -> Result<SrsVector> {
        if let Some(s) = &tx.srs {
            return Ok(s.clone());
        }
        let b = self.ctx.game_for(Some(&tx.event))?;
        Ok(srs_from_game(&b.game, &self.ctx.cfg.solver_for(&tx.id))?.srs)
    }
}

#[derive(Serialize)]
struct SettleResult {
    transactions_settled: usize,
    sampled_fraction: f64,
    conservation_error: f64,
    correlation_warning: bool,
    /// `id: reason` for every transaction left for the next period.
    quarantined: Vec<String>,
    committed: bool,
    balances_owners: Vec<f64>,
    balances_developer: f64,
}

pub fn settle(ctx: &Context, dry_run: bool) -> Result<()> {
    let BetaMode::Fixed { value: beta } = ctx.cfg.beta else {
        return Err(Error::Config("settle needs a fixed beta (e.g. --beta 1)".into()));
    };
    let dir = ctx.ledger_dir.as_ref().ok_or_else(|| Error::Config("no ledger given (use --ledger or [ledger] path)".into()))?;
    if !dir.join(LOG_FILE).is_file() {
        return Err(Error::Storage(format!("no readable ledger at {}", dir.display())));
    }
    let store = LedgerStore::open(dir)?;
    let pending = store.unsettled();
    let owners = match ctx.owners()? {
        Some(n) => n,
        None => match pending.iter().find_map(|t| t.srs.as_ref().map(SrsVector::len)) {
            Some(n) => n,
            None if pending.is_empty() => store.balances().owners.len(),
            None => return Err(Error::Config("ledger has no stored shares and no dataset is configured".into())),
        },
    };
    let attributor = ConfiguredAttributor { ctx, owners };
    let report = match ctx.cfg.ledger.mode {
        SettleMode::Full => settle_full(&store, beta, &attributor)?,
        SettleMode::Sample => {
            let k = ctx.cfg.ledger.sample_size.ok_or_else(|| Error::Config("sample mode needs a sample size".into()))?;
            settle_subsampled(&store, beta, &attributor, k, ctx.cfg.ledger.seed.unwrap_or_default())?
        }
    };
    if !dry_run {
        store.commit(&report)?;
    }
    let balances = store.balances();
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    let result = SettleResult {
        transactions_settled: report.settled_ids.len(),
        sampled_fraction: report.sampled_fraction,
        conservation_error: report.conservation_error(),
        correlation_warning: report.correlation_warning,
        quarantined: report.quarantined.iter().map(|(id, why)| format!("{id}: {why}")).collect(),
        committed: !dry_run,
        balances_owners: balances.owners,
        balances_developer: balances.developer,
    };
    emit(&ctx.out_dir, "settlement", &String::from_utf8_lossy(&csv), &ctx.cfg, &result)?;
    println!(
        "settled {} transactions, income {}, conservation error {:e}",
        result.transactions_settled,
        num(report.total_income),
        result.conservation_error
    );
    Ok(())
}

#[derive(Serialize)]
struct SimulateResult {
    owners: usize,
    points: usize,
    transactions: usize,
}

pub fn simulate(ctx: &Context) -> Result<()> {
    let spec = &ctx.cfg.simulate;
    let seed = ctx.cfg.seed;
    let (partition, event, distances) = match spec.fixture {
        Fixture::Clusters => {
            let sc = &spec.scenario;
            (sc.partition(seed), sc.target_event(seed), (0..sc.owners).map(|i| sc.distance(i)).collect::<Vec<_>>())
        }
        Fixture::Duplicate => (duplicate_partition(seed, spec.scenario.points_per_owner), GenerationEvent::new(vec![1.0, -1.0]), vec![0.0, 0.0]),
    };
    let n = partition.len();
    if n == 0 {
        return Err(Error::Config("simulation needs at least one owner".into()));
    }
    let dir = &ctx.out_dir;
    fs::create_dir_all(dir).map_err(|e| Error::Storage(format!("{}: {e}", dir.display())))?;
    save_partition(&partition, &dir.join("dataset.csv"))?;

    let ledger_dir = dir.join("ledger");
    for f in [LOG_FILE, SNAPSHOT_FILE] {
        let p = ledger_dir.join(f);
        if p.is_file() {
            fs::remove_file(&p).map_err(|e| Error::Storage(format!("{}: {e}", p.display())))?;
        }
    }
    let store = LedgerStore::open(&ledger_dir)?;
    let txs = match spec.fixture {
        Fixture::Clusters => spec.scenario.attributed_transactions(spec.transactions, spec.price, seed)?,
        Fixture::Duplicate => constant_price_transactions(spec.transactions, spec.price, &vec![1.0; n], rng::derive_seed(seed, "ledger")),
    };
    for tx in txs {
        store.record(tx)?;
    }

    let fixture = RunConfig {
        seed,
        dataset: Some(PathBuf::from("dataset.csv")),
        event: Some(config::EventSpec { x: event.x.clone(), label: None }),
        ledger: config::LedgerSpec { path: Some(PathBuf::from("ledger")), ..Default::default() },
        oracle: ctx.cfg.oracle,
        simulate: spec.clone(),
        ..RunConfig::default()
    };
    write_durable(&dir.join("config.toml"), fixture.to_toml()?.as_bytes())?;

    let mut csv = String::from("owner_id,distance,points\n");
    for (i, ds) in partition.iter().enumerate() {
        writeln!(csv, "{i},{},{}", num(distances[i]), ds.points.len()).unwrap();
    }
    let result = SimulateResult { owners: n, points: partition.iter().map(|d| d.points.len()).sum(), transactions: store.len() };
    emit(dir, "simulate", &csv, &ctx.cfg, &result)
}
