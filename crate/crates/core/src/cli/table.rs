//! Tabulated games: a `coalition,value` CSV with members joined by `;` and
//! an empty field for the empty coalition. Every coalition must appear once.

use std::io::Read;

use crate::error::{Error, Result};
use crate::game::{Coalition, CoalitionGame};

const TABLE_LIMIT: usize = 20;

pub fn read_table(reader: impl Read) -> Result<(usize, Vec<f64>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Config(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["coalition", "value"] {
        return Err(Error::Config("game table header must be coalition,value".into()));
    }
    let mut rows = vec![];
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Config(e.to_string()))?;
        let bad = |what: &str| Error::Config(format!("game table row {}: bad {what}", line + 2));
        let mut bits = 0u64;
        for m in rec[0].split(';').map(str::trim).filter(|m| !m.is_empty()) {
            let i: usize = m.parse().map_err(|_| bad("member"))?;
            if i >= TABLE_LIMIT {
                return Err(Error::TooManyPlayers { n: i + 1, limit: TABLE_LIMIT });
            }
            bits |= 1 << i;
        }
        let v: f64 = rec[1].trim().parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| bad("value"))?;
        rows.push((bits, v));
    }
    let n = rows.iter().map(|(b, _)| 64 - b.leading_zeros() as usize).max().unwrap_or(0);
    let mut values = vec![None; 1 << n];
    for (bits, v) in rows {
        if values[bits as usize].replace(v).is_some() {
            return Err(Error::Config(format!("coalition {:?} listed twice", Coalition::from_bits(bits))));
        }
    }
    let values = values
        .into_iter()
        .enumerate()
        .map(|(b, v)| v.ok_or_else(|| Error::Config(format!("coalition {:?} missing", Coalition::from_bits(b as u64)))))
        .collect::<Result<Vec<_>>>()?;
    Ok((n, values))
}

pub fn table_game(n: usize, values: Vec<f64>) -> CoalitionGame {
    CoalitionGame::new(n, move |s: Coalition| values[s.bits() as usize])
}
