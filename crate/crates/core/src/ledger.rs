//! Transaction log and royalty settlement.
//!
//! The log is line-delimited, one transaction per line:
//!
//! ```text
//! id|price|event-ref|srs-csv|settled-flag
//! ```
//!
//! `event-ref` is `label@x0;x1;...` (or just the coordinates when the event
//! is unconditioned), `srs-csv` is the comma-separated share vector (empty
//! until attributed, suffixed with `*` when degenerate), and the settled flag
//! is `0` or `1`. Settling a transaction appends a fresh line for it with the
//! flag set; on replay the latest line for an id wins. Lines starting with
//! `#` are comments. Accrued balances live in a snapshot file next to the log.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use rand::seq::index;

use crate::error::{Error, Result};
use crate::numeric::CompensatedSum;
use crate::oracle::GenerationEvent;
use crate::rng;
use crate::royalty::SrsVector;

pub const LOG_FILE: &str = "transactions.log";
pub const SNAPSHOT_FILE: &str = "balances.snapshot";

#[derive(Debug, Clone, PartialEq)]
pub struct Transaction {
    pub id: String,
    pub price: f64,
    pub event: GenerationEvent,
    pub srs: Option<SrsVector>,
}

impl Transaction {
    pub fn new(id: impl Into<String>, price: f64, event: GenerationEvent) -> Self {
        Self { id: id.into(), price, event, srs: None }
    }

    fn validate(&self) -> Result<()> {
        if self.id.is_empty() || self.id.contains(['|', '\n', '\r']) || self.id.starts_with('#') {
            return Err(Error::Precondition(format!("invalid transaction id {:?}", self.id)));
        }
        if !(self.price.is_finite() && self.price >= 0.0) {
            return Err(Error::Precondition(format!("transaction {} has price {}", self.id, self.price)));
        }
        if let Some(label) = &self.event.conditioning {
            if label.contains(['|', '@', ';', '\n', '\r']) {
                return Err(Error::Precondition(format!("label {label:?} contains a reserved character")));
            }
        }
        if let Some(s) = &self.srs {
            s.validate()?;
        }
        Ok(())
    }
}

fn encode_line(tx: &Transaction, settled: bool) -> String {
    let coords: Vec<String> = tx.event.x.iter().map(|v| format!("{v:?}")).collect();
    let event = match &tx.event.conditioning {
        Some(l) => format!("{l}@{}", coords.join(";")),
        None => coords.join(";"),
    };
    let srs = match &tx.srs {
        None => String::new(),
        Some(s) => {
            let body: Vec<String> = s.shares.iter().map(|v| format!("{v:?}")).collect();
            format!("{}{}", body.join(","), if s.degenerate { "*" } else { "" })
        }
    };
    format!("{}|{:?}|{}|{}|{}", tx.id, tx.price, event, srs, u8::from(settled))
}

fn decode_line(line: &str) -> Result<(Transaction, bool)> {
    let bad = |what: &str| Error::Storage(format!("malformed ledger line ({what}): {line:?}"));
    let fields: Vec<&str> = line.split('|').collect();
    if fields.len() != 5 {
        return Err(bad("field count"));
    }
    let price: f64 = fields[1].parse().map_err(|_| bad("price"))?;
    let (label, coords) = match fields[2].split_once('@') {
        Some((l, c)) => (Some(l.to_string()), c),
        None => (None, fields[2]),
    };
    let x = if coords.is_empty() {
        vec![]
    } else {
        coords.split(';').map(|c| c.parse::<f64>().map_err(|_| bad("event"))).collect::<Result<Vec<_>>>()?
    };
    let srs = if fields[3].is_empty() {
        None
    } else {
        let (body, degenerate) = match fields[3].strip_suffix('*') {
            Some(b) => (b, true),
            None => (fields[3], false),
        };
        let shares = body.split(',').map(|v| v.parse::<f64>().map_err(|_| bad("srs"))).collect::<Result<Vec<_>>>()?;
        Some(SrsVector { shares, degenerate })
    };
    let settled = match fields[4] {
        "0" => false,
        "1" => true,
        _ => return Err(bad("settled flag")),
    };
    let tx = Transaction { id: fields[0].to_string(), price, event: GenerationEvent { x, conditioning: label }, srs };
    Ok((tx, settled))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Balances {
    pub owners: Vec<f64>,
    pub developer: f64,
    pub settlements: u64,
}

#[derive(Debug)]
struct Entry {
    tx: Transaction,
    settled: bool,
}

#[derive(Debug, Default)]
struct Inner {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
    balances: Balances,
    log: Option<BufWriter<File>>,
}

/// Append-only transaction store with accrued per-owner balances.
#[derive(Debug, Default)]
pub struct LedgerStore {
    dir: Option<PathBuf>,
    inner: Mutex<Inner>,
    settlement: Mutex<()>,
}

impl LedgerStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) a ledger directory and replays its log.
    pub fn open(dir: &Path) -> Result<Self> {
        let storage = |e: std::io::Error| Error::Storage(format!("{}: {e}", dir.display()));
        fs::create_dir_all(dir).map_err(storage)?;
        let log_path = dir.join(LOG_FILE);
        let mut inner = Inner::default();
        if log_path.exists() {
            let reader = BufReader::new(File::open(&log_path).map_err(storage)?);
            for line in reader.lines() {
                let line = line.map_err(storage)?;
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (tx, settled) = decode_line(&line)?;
                match inner.index.get(&tx.id) {
                    Some(&i) => inner.entries[i] = Entry { tx, settled },
                    None => {
                        inner.index.insert(tx.id.clone(), inner.entries.len());
                        inner.entries.push(Entry { tx, settled });
                    }
                }
            }
        }
        let snap = dir.join(SNAPSHOT_FILE);
        if snap.exists() {
            inner.balances = read_snapshot(&snap)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&log_path).map_err(storage)?;
        inner.log = Some(BufWriter::new(file));
        Ok(Self { dir: Some(dir.to_path_buf()), inner: Mutex::new(inner), settlement: Mutex::new(()) })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn record(&self, tx: Transaction) -> Result<()> {
        tx.validate()?;
        let mut inner = self.inner.lock();
        if inner.index.contains_key(&tx.id) {
            return Err(Error::DuplicateId(tx.id));
        }
        if let Some(log) = inner.log.as_mut() {
            writeln!(log, "{}", encode_line(&tx, false)).and_then(|_| log.flush()).map_err(|e| Error::Storage(e.to_string()))?;
        }
        let pos = inner.entries.len();
        inner.index.insert(tx.id.clone(), pos);
        inner.entries.push(Entry { tx, settled: false });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inner.lock().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, id: &str) -> Option<(Transaction, bool)> {
        let inner = self.inner.lock();
        inner.index.get(id).map(|&i| (inner.entries[i].tx.clone(), inner.entries[i].settled))
    }

    /// Unsettled transactions in recording order.
    pub fn unsettled(&self) -> Vec<Transaction> {
        self.inner.lock().entries.iter().filter(|e| !e.settled).map(|e| e.tx.clone()).collect()
    }

    pub fn balances(&self) -> Balances {
        self.inner.lock().balances.clone()
    }

    /// Marks the report's transactions settled and accrues its payouts.
    pub fn commit(&self, report: &SettlementReport) -> Result<()> {
        let _exclusive = self.settlement.lock();
        let mut guard = self.inner.lock();
        let inner = &mut *guard;
        let mut positions = Vec::with_capacity(report.settled_ids.len());
        for id in &report.settled_ids {
            match inner.index.get(id) {
                Some(&i) if !inner.entries[i].settled => positions.push(i),
                Some(_) => return Err(Error::Precondition(format!("transaction {id} already settled"))),
                None => return Err(Error::Precondition(format!("unknown transaction {id}"))),
            }
        }
        let attributed: HashMap<&str, &SrsVector> = report.attributions.iter().map(|(id, s)| (id.as_str(), s)).collect();
        let mut lines = String::new();
        for &i in &positions {
            let e = &mut inner.entries[i];
            if e.tx.srs.is_none() {
                e.tx.srs = attributed.get(e.tx.id.as_str()).map(|s| (*s).clone());
            }
            e.settled = true;
            lines.push_str(&encode_line(&e.tx, true));
            lines.push('\n');
        }
        let b = &mut inner.balances;
        if b.owners.len() < report.owner_payouts.len() {
            b.owners.resize(report.owner_payouts.len(), 0.0);
        }
        for (acc, p) in b.owners.iter_mut().zip(&report.owner_payouts) {
            *acc += p;
        }
        b.developer += report.developer_payout;
        b.settlements += 1;
        let balances = b.clone();
        if let Some(log) = inner.log.as_mut() {
            let io = |e: std::io::Error| Error::Storage(e.to_string());
            write!(log, "# settlement {} estimator={}\n{lines}", balances.settlements, report.estimator.as_str()).map_err(io)?;
            log.flush().map_err(io)?;
            log.get_ref().sync_data().map_err(io)?;
        }
        if let Some(dir) = &self.dir {
            write_snapshot(&dir.join(SNAPSHOT_FILE), &balances)?;
        }
        Ok(())
    }
}

fn write_snapshot(path: &Path, b: &Balances) -> Result<()> {
    let mut body = format!("settlements={}\ndeveloper={:?}\n", b.settlements, b.developer);
    for (i, v) in b.owners.iter().enumerate() {
        body.push_str(&format!("owner.{i}={v:?}\n"));
    }
    let tmp = path.with_extension("tmp");
    let io = |e: std::io::Error| Error::Storage(format!("{}: {e}", path.display()));
    {
        let mut f = File::create(&tmp).map_err(io)?;
        f.write_all(body.as_bytes()).map_err(io)?;
        f.sync_all().map_err(io)?;
    }
    fs::rename(&tmp, path).map_err(io)
}

fn read_snapshot(path: &Path) -> Result<Balances> {
    let text = fs::read_to_string(path).map_err(|e| Error::Storage(format!("{}: {e}", path.display())))?;
    let bad = |l: &str| Error::Storage(format!("malformed snapshot line {l:?}"));
    let mut b = Balances::default();
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line.split_once('=').ok_or_else(|| bad(line))?;
        match k {
            "settlements" => b.settlements = v.parse().map_err(|_| bad(line))?,
            "developer" => b.developer = v.parse().map_err(|_| bad(line))?,
            _ => {
                let i: usize = k.strip_prefix("owner.").and_then(|i| i.parse().ok()).ok_or_else(|| bad(line))?;
                if b.owners.len() <= i {
                    b.owners.resize(i + 1, 0.0);
                }
                b.owners[i] = v.parse().map_err(|_| bad(line))?;
            }
        }
    }
    Ok(b)
}

/// Computes a transaction's royalty shares.
pub trait Attributor: Sync {
    fn owners(&self) -> usize;
    fn attribute(&self, tx: &Transaction) -> Result<SrsVector>;
}

/// Uses the shares already stored on each transaction.
#[derive(Debug, Clone, Copy)]
pub struct StoredShares {
    pub owners: usize,
}

impl Attributor for StoredShares {
    fn owners(&self) -> usize {
        self.owners
    }

    fn attribute(&self, tx: &Transaction) -> Result<SrsVector> {
        tx.srs.clone().ok_or_else(|| Error::OracleFailure(format!("transaction {} has no royalty shares", tx.id)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SettlementEstimator {
    Full,
    Subsampled,
}

impl SettlementEstimator {
    pub fn as_str(self) -> &'static str {
        match self {
            SettlementEstimator::Full => "full",
            SettlementEstimator::Subsampled => "subsampled",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SettlementReport {
    pub owner_payouts: Vec<f64>,
    pub developer_payout: f64,
    pub total_income: f64,
    pub sampled_fraction: f64,
    pub estimator: SettlementEstimator,
    pub seed: Option<u64>,
    pub beta_data: f64,
    /// Transactions this report pays out for.
    pub settled_ids: Vec<String>,
    /// Shares computed during settlement, by transaction id.
    pub attributions: Vec<(String, SrsVector)>,
    /// Transactions whose attribution failed, with the reason. They stay
    /// unsettled for the next period.
    pub quarantined: Vec<(String, String)>,
    /// Prices vary and are correlated with some owner's shares, so the
    /// subsampled estimate may be biased.
    pub correlation_warning: bool,
}

impl SettlementReport {
    /// `|sum(owner) + developer - income|` relative to `max(1, income)`.
    pub fn conservation_error(&self) -> f64 {
        let mut s: CompensatedSum = self.owner_payouts.iter().copied().collect();
        s.add(self.developer_payout);
        (s.value() - self.total_income).abs() / self.total_income.abs().max(1.0)
    }

    /// CSV with an `owner_id,payout` header, one row per owner, a
    /// `developer` row and a trailing metadata comment.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "owner_id,payout")?;
        for (i, p) in self.owner_payouts.iter().enumerate() {
            writeln!(w, "{i},{p:?}")?;
        }
        writeln!(w, "developer,{:?}", self.developer_payout)?;
        let seed = self.seed.map_or_else(|| "none".to_string(), |s| s.to_string());
        writeln!(w, "# total_income={:?} estimator={} seed={seed}", self.total_income, self.estimator.as_str())?;
        Ok(())
    }
}

fn check_beta(beta_data: f64) -> Result<()> {
    if (0.0..=1.0).contains(&beta_data) {
        Ok(())
    } else {
        Err(Error::Config(format!("beta_data {beta_data} outside [0, 1]")))
    }
}

fn attribute_checked(attributor: &dyn Attributor, tx: &Transaction) -> Result<SrsVector> {
    let s = attributor.attribute(tx)?;
    if s.len() != attributor.owners() {
        return Err(Error::DimensionMismatch { expected: attributor.owners(), got: s.len() });
    }
    s.validate()?;
    Ok(s)
}

/// Flags prices that are not constant and correlate with some owner's
/// shares beyond three standard errors of a zero correlation.
fn price_share_correlation(prices: &[f64], shares: &[&SrsVector], owners: usize) -> bool {
    let m = prices.len();
    if m < 3 {
        return false;
    }
    let mp = prices.iter().sum::<f64>() / m as f64;
    let vp: f64 = prices.iter().map(|p| (p - mp).powi(2)).sum();
    if vp <= 0.0 {
        return false;
    }
    let threshold = 3.0 / (m as f64).sqrt();
    (0..owners).any(|i| {
        let ms = shares.iter().map(|s| s.shares[i]).sum::<f64>() / m as f64;
        let vs: f64 = shares.iter().map(|s| (s.shares[i] - ms).powi(2)).sum();
        if vs <= 0.0 {
            return false;
        }
        let cov: f64 = prices.iter().zip(shares).map(|(p, s)| (p - mp) * (s.shares[i] - ms)).sum();
        (cov / (vp * vs).sqrt()).abs() > threshold
    })
}

/// Pays every unsettled transaction by its own shares:
/// `owner_i = beta * sum(price * srs_i)`, `developer = (1 - beta) * sum(price)`.
pub fn settle_full(store: &LedgerStore, beta_data: f64, attributor: &dyn Attributor) -> Result<SettlementReport> {
    check_beta(beta_data)?;
    let _exclusive = store.settlement.lock();
    let pending = store.unsettled();
    let n = attributor.owners();
    let mut sums = vec![CompensatedSum::new(); n];
    let mut income = CompensatedSum::new();
    let mut report = SettlementReport {
        owner_payouts: vec![],
        developer_payout: 0.0,
        total_income: 0.0,
        sampled_fraction: 1.0,
        estimator: SettlementEstimator::Full,
        seed: None,
        beta_data,
        settled_ids: vec![],
        attributions: vec![],
        quarantined: vec![],
        correlation_warning: false,
    };
    let mut prices = vec![];
    for tx in &pending {
        match attribute_checked(attributor, tx) {
            Ok(s) => {
                for (acc, share) in sums.iter_mut().zip(&s.shares) {
                    acc.add(tx.price * share);
                }
                income.add(tx.price);
                prices.push(tx.price);
                report.settled_ids.push(tx.id.clone());
                report.attributions.push((tx.id.clone(), s));
            }
            Err(e) => report.quarantined.push((tx.id.clone(), e.to_string())),
        }
    }
    let shares: Vec<&SrsVector> = report.attributions.iter().map(|(_, s)| s).collect();
    report.correlation_warning = price_share_correlation(&prices, &shares, n);
    report.owner_payouts = sums.iter().map(|s| beta_data * s.value()).collect();
    report.total_income = income.value();
    report.developer_payout = (1.0 - beta_data) * report.total_income;
    Ok(report)
}

/// Estimates mean shares from a seeded sample (without replacement) of the
/// unsettled transactions and scales by their total income.
pub fn settle_subsampled(
    store: &LedgerStore,
    beta_data: f64,
    attributor: &dyn Attributor,
    sample_size: usize,
    seed: u64,
) -> Result<SettlementReport> {
    check_beta(beta_data)?;
    let _exclusive = store.settlement.lock();
    let pending = store.unsettled();
    if sample_size == 0 || sample_size > pending.len() {
        return Err(Error::Precondition(format!(
            "sample size {sample_size} must be between 1 and the {} unsettled transactions",
            pending.len()
        )));
    }
    let n = attributor.owners();
    let mut picks = index::sample(&mut rng::stream(seed, 0), pending.len(), sample_size).into_vec();
    picks.sort_unstable();

    let mut attributions = vec![];
    let mut quarantined = vec![];
    for &k in &picks {
        let tx = &pending[k];
        match attribute_checked(attributor, tx) {
            Ok(s) => attributions.push((k, s)),
            Err(e) => quarantined.push((tx.id.clone(), e.to_string())),
        }
    }
    if attributions.is_empty() {
        return Err(Error::OracleFailure("every sampled transaction failed attribution".into()));
    }
    let mut mean = vec![CompensatedSum::new(); n];
    for (_, s) in &attributions {
        for (acc, v) in mean.iter_mut().zip(&s.shares) {
            acc.add(*v);
        }
    }
    let m = attributions.len() as f64;
    let mut income = CompensatedSum::new();
    let mut settled_ids = vec![];
    for tx in &pending {
        if !quarantined.iter().any(|(id, _)| id == &tx.id) {
            income.add(tx.price);
            settled_ids.push(tx.id.clone());
        }
    }
    let total_income = income.value();
    let prices: Vec<f64> = attributions.iter().map(|(k, _)| pending[*k].price).collect();
    let shares: Vec<&SrsVector> = attributions.iter().map(|(_, s)| s).collect();
    let correlation_warning = price_share_correlation(&prices, &shares, n);
    Ok(SettlementReport {
        owner_payouts: mean.iter().map(|s| beta_data * total_income * (s.value() / m)).collect(),
        developer_payout: (1.0 - beta_data) * total_income,
        total_income,
        sampled_fraction: sample_size as f64 / pending.len() as f64,
        estimator: SettlementEstimator::Subsampled,
        seed: Some(seed),
        beta_data,
        settled_ids,
        attributions: attributions.into_iter().map(|(k, s)| (pending[k].id.clone(), s)).collect(),
        quarantined,
        correlation_warning,
    })
}
