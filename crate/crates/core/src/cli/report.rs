//! Report files: CSV tables and `.meta.toml` sidecars, synced before return.

use std::fs::{self, File};
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::config::RunConfig;
use crate::error::{Error, Result};

pub fn write_durable(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |e: std::io::Error| Error::Storage(format!("{}: {e}", path.display()));
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let mut f = File::create(path).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)
}

#[derive(Serialize)]
struct Meta<'a, R: Serialize> {
    command: &'a str,
    config: &'a RunConfig,
    result: &'a R,
}

/// Writes `<dir>/<name>.csv` and `<dir>/<name>.meta.toml`.
pub fn emit<R: Serialize>(dir: &Path, name: &str, csv: &str, config: &RunConfig, result: &R) -> Result<()> {
    let meta = toml::to_string(&Meta { command: name, config, result }).map_err(|e| Error::Config(e.to_string()))?;
    write_durable(&dir.join(format!("{name}.csv")), csv.as_bytes())?;
    write_durable(&dir.join(format!("{name}.meta.toml")), meta.as_bytes())
}

/// Shortest round-trip form, so reports reload bit-exactly.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}
