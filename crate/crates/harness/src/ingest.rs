//! Loading graphs and features from CSV files.

use std::fs::File;
use std::path::{Path, PathBuf};

use glpn_core::graph::{gaussian_kernel_adjacency, weighted_adjacency};
use glpn_core::missing::{minmax_scale, ScalingRecord};
use glpn_core::{DenseMatrix, Graph};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: file not found")]
    NotFound { path: PathBuf },
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    /// `row` and `column` are 1-based positions in the file.
    #[error("{path}:{row}:{column}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        column: usize,
        message: String,
    },
    #[error("{0}")]
    Shape(String),
    #[error(transparent)]
    Core(#[from] glpn_core::Error),
}

pub type IngestResult<T> = std::result::Result<T, IngestError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AdjacencySource {
    /// `src,dst[,weight]` rows with 0-based node ids.
    Edges(PathBuf),
    /// Dense `n × n` distances turned into a thresholded Gaussian kernel.
    Distances { path: PathBuf, sigma: f64, threshold: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSpec {
    pub features: PathBuf,
    /// Whether the first line of the features file is a header.
    pub header: bool,
    pub adjacency: AdjacencySource,
    /// Optional `n × d` 0/1 file; 0 marks an entry as unknown.
    pub mask: Option<PathBuf>,
}

/// A loaded data set. `graph` holds MinMax-scaled features and the known
/// mask; `raw` keeps the original values.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub graph: Graph,
    pub raw: DenseMatrix,
    pub record: ScalingRecord,
}

fn open(path: &Path) -> IngestResult<File> {
    File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => IngestError::NotFound { path: path.into() },
        _ => IngestError::Io {
            path: path.into(),
            message: e.to_string(),
        },
    })
}

/// Reads all records as strings, tracking 1-based line numbers.
fn read_records(path: &Path, header: bool) -> IngestResult<Vec<(usize, Vec<String>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let row = e.position().map_or(0, |p| p.line() as usize);
            IngestError::Parse {
                path: path.into(),
                row,
                column: 0,
                message: e.to_string(),
            }
        })?;
        let line = rec.position().map_or(out.len() + 1, |p| p.line() as usize);
        if rec.iter().all(str::is_empty) {
            continue;
        }
        out.push((line, rec.iter().map(str::to_owned).collect()));
    }
    Ok(out)
}

fn parse_cell<T: std::str::FromStr>(path: &Path, row: usize, column: usize, cell: &str) -> IngestResult<T> {
    cell.parse().map_err(|_| IngestError::Parse {
        path: path.into(),
        row,
        column,
        message: format!("cannot parse {cell:?}"),
    })
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan")
}

/// Dense numeric table. Empty, `NA` and `NaN` cells come back as `None`
/// when `allow_missing` is set.
fn read_table(path: &Path, header: bool, allow_missing: bool) -> IngestResult<Vec<Vec<Option<f64>>>> {
    let records = read_records(path, header)?;
    let width = records.first().map_or(0, |(_, r)| r.len());
    let mut rows = Vec::with_capacity(records.len());
    for (line, rec) in records {
        if rec.len() != width {
            return Err(IngestError::Parse {
                path: path.into(),
                row: line,
                column: rec.len().min(width) + 1,
                message: format!("expected {width} columns, found {}", rec.len()),
            });
        }
        let row = rec
            .iter()
            .enumerate()
            .map(|(j, cell)| {
                if allow_missing && is_missing(cell) {
                    return Ok(None);
                }
                let v: f64 = parse_cell(path, line, j + 1, cell)?;
                if !v.is_finite() {
                    return Err(IngestError::Parse {
                        path: path.into(),
                        row: line,
                        column: j + 1,
                        message: "non-finite value".into(),
                    });
                }
                Ok(Some(v))
            })
            .collect::<IngestResult<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.is_empty() || width == 0 {
        return Err(IngestError::Shape(format!("{}: no data rows", path.display())));
    }
    Ok(rows)
}

/// Features plus the mask of present entries.
pub fn read_features(path: &Path, header: bool) -> IngestResult<(DenseMatrix, DenseMatrix)> {
    let rows = read_table(path, header, true)?;
    let (n, d) = (rows.len(), rows[0].len());
    let x = DenseMatrix::from_fn(n, d, |i, j| rows[i][j].unwrap_or(0.0));
    let mask = DenseMatrix::from_fn(n, d, |i, j| rows[i][j].is_some() as u8 as f64);
    Ok((x, mask))
}

pub fn read_matrix(path: &Path) -> IngestResult<DenseMatrix> {
    let rows = read_table(path, false, false)?;
    let (n, d) = (rows.len(), rows[0].len());
    Ok(DenseMatrix::from_fn(n, d, |i, j| rows[i][j].expect("no missing cells")))
}

pub fn read_mask(path: &Path) -> IngestResult<DenseMatrix> {
    let m = read_matrix(path)?;
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            let v = m.get(i, j);
            if v != 0.0 && v != 1.0 {
                return Err(IngestError::Parse {
                    path: path.into(),
                    row: i + 1,
                    column: j + 1,
                    message: format!("mask entries must be 0 or 1, found {v}"),
                });
            }
        }
    }
    Ok(m)
}

pub fn read_edges(path: &Path, n: usize) -> IngestResult<DenseMatrix> {
    let mut edges = Vec::new();
    for (line, rec) in read_records(path, false)? {
        // Skip a textual header line.
        if edges.is_empty() && rec.first().is_some_and(|c| c.parse::<usize>().is_err() && c.parse::<f64>().is_err()) {
            continue;
        }
        if !(2..=3).contains(&rec.len()) {
            return Err(IngestError::Parse {
                path: path.into(),
                row: line,
                column: rec.len() + 1,
                message: "expected src,dst[,weight]".into(),
            });
        }
        let src: usize = parse_cell(path, line, 1, &rec[0])?;
        let dst: usize = parse_cell(path, line, 2, &rec[1])?;
        for (column, node) in [(1, src), (2, dst)] {
            if node >= n {
                return Err(IngestError::Parse {
                    path: path.into(),
                    row: line,
                    column,
                    message: format!("node {node} out of range for {n} nodes"),
                });
            }
        }
        let w: f64 = match rec.get(2) {
            Some(c) => parse_cell(path, line, 3, c)?,
            None => 1.0,
        };
        edges.push((src, dst, w));
    }
    Ok(weighted_adjacency(n, &edges)?)
}

pub fn ingest(spec: &IngestSpec) -> IngestResult<Dataset> {
    let (raw, mut mask) = read_features(&spec.features, spec.header)?;
    let n = raw.rows();
    let adjacency = match &spec.adjacency {
        AdjacencySource::Edges(path) => read_edges(path, n)?,
        AdjacencySource::Distances { path, sigma, threshold } => {
            let dist = read_matrix(path)?;
            if dist.shape() != (n, n) {
                return Err(IngestError::Shape(format!(
                    "distance matrix is {}x{}, features have {n} rows",
                    dist.rows(),
                    dist.cols()
                )));
            }
            gaussian_kernel_adjacency(&dist, *sigma, *threshold)?
        }
    };
    if let Some(path) = &spec.mask {
        let m = read_mask(path)?;
        if m.shape() != raw.shape() {
            return Err(IngestError::Shape(format!(
                "mask is {}x{}, features are {}x{}",
                m.rows(),
                m.cols(),
                raw.rows(),
                raw.cols()
            )));
        }
        mask = mask.hadamard(&m)?;
    }
    let (scaled, record) = minmax_scale(&raw, &mask)?;
    let graph = Graph::new(adjacency, scaled, mask)?;
    Ok(Dataset { graph, raw, record })
}
