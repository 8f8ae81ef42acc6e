//! Paired-series CSV files: header `index,x,y`, the index column optional.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sinoma_core::series::{PairedSeries, Series};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputFingerprint {
    pub path: String,
    pub rows: usize,
    pub sha256: String,
}

pub fn read_pair(path: &Path) -> Result<(PairedSeries, InputFingerprint)> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes.as_slice());
    let headers = reader.headers().context("missing CSV header")?.clone();
    let column = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (Some(ix), Some(iy)) = (column("x"), column("y")) else {
        bail!("{}: header must name columns x and y (got {:?})", path.display(), headers.iter().collect::<Vec<_>>());
    };

    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (row, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("{}: malformed row {}", path.display(), row + 1))?;
        let field = |i: usize, name: &str| -> Result<f64> {
            let raw = record.get(i).unwrap_or("");
            raw.parse::<f64>()
                .with_context(|| format!("{}: row {}: column {name}: {raw:?} is not a number", path.display(), row + 1))
        };
        x.push(field(ix, "x")?);
        y.push(field(iy, "y")?);
    }
    let rows = x.len();
    let pair = PairedSeries::from_vecs(x, y).with_context(|| format!("{}: invalid series", path.display()))?;
    let digest = Sha256::digest(&bytes);
    let sha256 = digest.iter().map(|b| format!("{b:02x}")).collect();
    Ok((pair, InputFingerprint { path: path.display().to_string(), rows, sha256 }))
}

#[derive(Serialize)]
struct Row {
    index: usize,
    x: f64,
    y: f64,
}

pub fn write_pair(path: &Path, x: &Series, y: &Series) -> Result<()> {
    let mut w = csv_writer(path)?;
    for (i, (a, b)) in x.values().iter().zip(y.values()).enumerate() {
        w.serialize(Row { index: i + 1, x: *a, y: *b })?;
    }
    w.flush()?;
    Ok(())
}

pub fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

pub fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().with_context(|| format!("cannot write {}", path.display()))
}

/// Writes pretty JSON followed by a newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}
