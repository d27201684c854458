//! Dataset CSV ingestion and export.
//!
//! The dataset schema is one header row `area_id,y,D,x1,...,xp` followed
//! by one row per area. Floats are written with 17 significant digits so
//! a round trip reproduces values exactly.

use std::io::Write;
use std::path::Path;

use fayherriot::{FhError, SmallAreaDataset};
use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv error in {path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("bad header: expected `area_id,y,D,x1,...,xp`, got `{0}`")]
    Header(String),
    #[error("row {row}, column {column}: {message}")]
    Cell {
        row: usize,
        column: String,
        message: String,
    },
    #[error(transparent)]
    Invalid(#[from] FhError),
}

pub fn read_dataset(path: &Path) -> Result<SmallAreaDataset, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_dataset_str(&text).map_err(|e| match e {
        IngestError::Csv { source, .. } => IngestError::Csv {
            path: path.display().to_string(),
            source,
        },
        other => other,
    })
}

pub fn read_dataset_str(text: &str) -> Result<SmallAreaDataset, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|source| IngestError::Csv {
            path: "<input>".into(),
            source,
        })?
        .iter()
        .map(|h| h.to_string())
        .collect();
    if headers.len() < 4
        || headers[0] != "area_id"
        || headers[1] != "y"
        || headers[2] != "D"
        || headers[3..]
            .iter()
            .enumerate()
            .any(|(j, h)| h != &format!("x{}", j + 1))
    {
        return Err(IngestError::Header(headers.join(",")));
    }
    let p = headers.len() - 3;

    let mut ids = Vec::new();
    let mut y = Vec::new();
    let mut d = Vec::new();
    let mut xs: Vec<Vec<f64>> = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|source| IngestError::Csv {
            path: "<input>".into(),
            source,
        })?;
        if record.len() != headers.len() {
            return Err(IngestError::Cell {
                row,
                column: "-".into(),
                message: format!("expected {} fields, got {}", headers.len(), record.len()),
            });
        }
        let parse = |col: usize| -> Result<f64, IngestError> {
            record[col].parse::<f64>().map_err(|_| IngestError::Cell {
                row,
                column: headers[col].clone(),
                message: format!("non-numeric value '{}'", &record[col]),
            })
        };
        let di = parse(2)?;
        if !(di > 0.0) {
            return Err(IngestError::Cell {
                row,
                column: "D".into(),
                message: format!("sampling variance must be strictly positive, got {di}"),
            });
        }
        ids.push(record[0].to_string());
        y.push(parse(1)?);
        d.push(di);
        let mut xrow = Vec::with_capacity(p);
        for j in 0..p {
            xrow.push(parse(3 + j)?);
        }
        xs.push(xrow);
    }
    if ids.is_empty() {
        return Err(IngestError::Header("no data rows".into()));
    }
    let m = ids.len();
    let x = DMatrix::from_fn(m, p, |i, j| xs[i][j]);
    Ok(SmallAreaDataset::from_parts(ids, y, d, x)?)
}

/// Serialize with full (17 significant digit) precision.
pub fn fmt_full(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_dataset<W: Write>(ds: &SmallAreaDataset, w: &mut W) -> std::io::Result<()> {
    let p = ds.p();
    let mut header = String::from("area_id,y,D");
    for j in 1..=p {
        header.push_str(&format!(",x{j}"));
    }
    writeln!(w, "{header}")?;
    for i in 0..ds.m() {
        let mut line = format!(
            "{},{},{}",
            ds.id(i),
            fmt_full(ds.y()[i]),
            fmt_full(ds.d()[i])
        );
        for j in 0..p {
            line.push(',');
            line.push_str(&fmt_full(ds.x()[(i, j)]));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Read a covariate design for scenario configs: header `x1,...,xp`.
pub fn read_design(path: &Path) -> Result<DMatrix<f64>, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|source| IngestError::Csv {
            path: path.display().to_string(),
            source,
        })?
        .iter()
        .map(|h| h.to_string())
        .collect();
    if headers.is_empty()
        || headers
            .iter()
            .enumerate()
            .any(|(j, h)| h != &format!("x{}", j + 1))
    {
        return Err(IngestError::Header(headers.join(",")));
    }
    let p = headers.len();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|source| IngestError::Csv {
            path: path.display().to_string(),
            source,
        })?;
        let mut xrow = Vec::with_capacity(p);
        for j in 0..p {
            let v = record[j].parse::<f64>().map_err(|_| IngestError::Cell {
                row,
                column: headers[j].clone(),
                message: format!("non-numeric value '{}'", &record[j]),
            })?;
            xrow.push(v);
        }
        rows.push(xrow);
    }
    Ok(DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]))
}
