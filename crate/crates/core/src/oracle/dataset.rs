//! Owner datasets and the `owner_id,label,x0,...,x{d-1}` CSV format.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::PlayerId;

#[derive(Debug, Clone, PartialEq)]
pub struct OwnerDataset {
    pub owner: PlayerId,
    pub points: Vec<Vec<f64>>,
    /// One entry per point; `None` for unlabeled points.
    pub labels: Vec<Option<String>>,
}

impl OwnerDataset {
    pub fn new(owner: usize, points: Vec<Vec<f64>>) -> Self {
        let labels = vec![None; points.len()];
        Self { owner: PlayerId(owner), points, labels }
    }

    pub fn labeled(owner: usize, points: Vec<Vec<f64>>, label: &str) -> Self {
        let labels = vec![Some(label.to_string()); points.len()];
        Self { owner: PlayerId(owner), points, labels }
    }

    pub fn dim(&self) -> Option<usize> {
        self.points.first().map(Vec::len)
    }
}

/// A generated sample `x`, optionally conditioned on a label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationEvent {
    pub x: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conditioning: Option<String>,
}

impl GenerationEvent {
    pub fn new(x: Vec<f64>) -> Self {
        Self { x, conditioning: None }
    }

    pub fn conditioned(x: Vec<f64>, label: &str) -> Self {
        Self { x, conditioning: Some(label.to_string()) }
    }
}

/// Dimension shared by every point of every owner.
pub fn partition_dim(partition: &[OwnerDataset]) -> Result<usize> {
    let mut dim = None;
    for ds in partition {
        for p in &ds.points {
            match dim {
                None if p.is_empty() => return Err(Error::DimensionMismatch { expected: 1, got: 0 }),
                None => dim = Some(p.len()),
                Some(d) if d != p.len() => return Err(Error::DimensionMismatch { expected: d, got: p.len() }),
                Some(_) => {}
            }
        }
    }
    dim.ok_or(Error::EmptyDataset)
}

/// Owners must be exactly `0..n`, in order.
pub fn validate_partition(partition: &[OwnerDataset]) -> Result<usize> {
    for (i, ds) in partition.iter().enumerate() {
        if ds.owner.index() != i {
            return Err(Error::Config(format!("owner at position {i} has id {}", ds.owner.index())));
        }
        if ds.labels.len() != ds.points.len() {
            return Err(Error::Config(format!("owner {i} has {} labels for {} points", ds.labels.len(), ds.points.len())));
        }
    }
    partition_dim(partition)
}

/// Points and labels of one owner, in file order.
type OwnerRows = (Vec<Vec<f64>>, Vec<Option<String>>);

pub fn read_partition(reader: impl Read) -> Result<Vec<OwnerDataset>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() < 3 || &headers[0] != "owner_id" || &headers[1] != "label" {
        return Err(Error::Config("dataset header must be owner_id,label,x0,...".into()));
    }
    for (j, h) in headers.iter().skip(2).enumerate() {
        if h != format!("x{j}") {
            return Err(Error::Config(format!("unexpected dataset column {h:?}")));
        }
    }
    let d = headers.len() - 2;
    let mut owners: BTreeMap<usize, OwnerRows> = BTreeMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = line + 2;
        if rec.len() != d + 2 {
            return Err(Error::Config(format!("row {row}: expected {} fields, got {}", d + 2, rec.len())));
        }
        let owner: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("row {row}: bad owner_id {:?}", &rec[0])))?;
        let label = (!rec[1].is_empty()).then(|| rec[1].to_string());
        let point = rec
            .iter()
            .skip(2)
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Config(format!("row {row}: bad coordinate {f:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let entry = owners.entry(owner).or_default();
        entry.0.push(point);
        entry.1.push(label);
    }
    let partition: Vec<OwnerDataset> = owners
        .into_iter()
        .map(|(owner, (points, labels))| OwnerDataset { owner: PlayerId(owner), points, labels })
        .collect();
    validate_partition(&partition)?;
    Ok(partition)
}

pub fn load_partition(path: &Path) -> Result<Vec<OwnerDataset>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Config(format!("cannot open dataset {}: {e}", path.display())))?;
    read_partition(std::io::BufReader::new(file))
}

/// Coordinates are written in shortest round-trip form, so reading the
/// output back reproduces every `f64` exactly.
pub fn write_partition(partition: &[OwnerDataset], writer: impl Write) -> Result<()> {
    let d = partition_dim(partition)?;
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["owner_id".to_string(), "label".to_string()];
    header.extend((0..d).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for ds in partition {
        for (p, label) in ds.points.iter().zip(&ds.labels) {
            let mut rec = vec![ds.owner.index().to_string(), label.clone().unwrap_or_default()];
            rec.extend(p.iter().map(|v| format!("{v:?}")));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_partition(partition: &[OwnerDataset], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_partition(partition, std::io::BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reads_labels_and_owners() {
        let csv = "owner_id,label,x0,x1\n0,gogh,1.5,2\n1,,0,-3e-2\n0,,4,5\n";
        let p = read_partition(csv.as_bytes()).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p[0].points, vec![vec![1.5, 2.0], vec![4.0, 5.0]]);
        assert_eq!(p[0].labels, vec![Some("gogh".into()), None]);
        assert_eq!(p[1].points, vec![vec![0.0, -0.03]]);
    }

    #[test]
    fn rejects_gaps_and_bad_rows() {
        assert!(read_partition("owner_id,label,x0\n0,,1\n2,,1\n".as_bytes()).is_err());
        assert!(read_partition("owner_id,label,x0\n0,,abc\n".as_bytes()).is_err());
        assert!(read_partition("owner,label,x0\n0,,1\n".as_bytes()).is_err());
        assert!(read_partition("owner_id,label,x0\n0,,1,2\n".as_bytes()).is_err());
        assert!(read_partition("owner_id,label,x0\n0,,NaN\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_bit_exact(
            rows in prop::collection::vec((0usize..3, prop::array::uniform3(any::<f64>().prop_filter("finite", |v| v.is_finite()))), 3..30)
        ) {
            let mut partition: Vec<OwnerDataset> = (0..3).map(|o| OwnerDataset::new(o, vec![])).collect();
            for (o, p) in &rows {
                partition[*o].points.push(p.to_vec());
                partition[*o].labels.push(if *o == 1 { Some("q".into()) } else { None });
            }
            partition.retain(|d| !d.points.is_empty());
            for (i, d) in partition.iter_mut().enumerate() {
                d.owner = PlayerId(i);
            }
            let mut buf = Vec::new();
            write_partition(&partition, &mut buf).unwrap();
            let back = read_partition(buf.as_slice()).unwrap();
            prop_assert_eq!(back.len(), partition.len());
            for (a, b) in back.iter().zip(&partition) {
                prop_assert_eq!(&a.labels, &b.labels);
                for (pa, pb) in a.points.iter().zip(&b.points) {
                    for (x, y) in pa.iter().zip(pb) {
                        prop_assert_eq!(x.to_bits(), y.to_bits());
                    }
                }
            }
        }
    }
}
