//! Plain-text matrix input and JSON result documents used by the command-line tool.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kcd::{KcdResult, SquareRootKind};
use crate::matops::{mat, Dims, Mat, Vector};
use crate::picse::{FitTrace, PicseParams};

/// Reads a headerless numeric CSV into a matrix (one CSV row per matrix row).
pub fn read_matrix_csv(path: &Path) -> Result<Mat> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::InvalidConfig(format!("not a number: {f:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 {
        return Err(Error::InvalidConfig(format!("{} holds no data", path.display())));
    }
    Ok(Mat::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Splits an `n × p` table whose rows are `vec(Yᵢ)` into `p1 × p2` observations.
pub fn observations_from_rows(table: &Mat, dims: Dims) -> Result<Vec<Mat>> {
    if table.ncols() != dims.p() {
        return Err(Error::DimensionMismatch(format!(
            "rows have {} entries, expected p1·p2 = {}",
            table.ncols(),
            dims.p()
        )));
    }
    (0..table.nrows())
        .map(|i| {
            let v: Vector = table.row(i).transpose();
            mat(&v, dims.p1, dims.p2)
        })
        .collect()
}

/// Row-major nested array.
pub fn rows_of(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

#[derive(Debug, Serialize)]
pub struct FitDocument {
    pub p1: usize,
    pub p2: usize,
    pub rank: usize,
    pub sqrt: SquareRootKind,
    pub n: usize,
    pub k1bar: Vec<Vec<f64>>,
    pub k2bar: Vec<Vec<f64>>,
    pub nu: f64,
    pub a: Vec<Vec<f64>>,
    pub lambda: f64,
    pub sigma_hat: Vec<Vec<f64>>,
    pub trace: FitTrace,
}

impl FitDocument {
    pub fn new(tau: &PicseParams, sigma: &Mat, trace: FitTrace, n: usize) -> Self {
        let d = tau.dims();
        FitDocument {
            p1: d.p1,
            p2: d.p2,
            rank: tau.a.r(),
            sqrt: tau.h_kind,
            n,
            k1bar: rows_of(&tau.k1bar),
            k2bar: rows_of(&tau.k2bar),
            nu: tau.nu,
            a: rows_of(&tau.a.a),
            lambda: tau.lambda,
            sigma_hat: rows_of(sigma),
            trace,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct KcdDocument {
    pub p1: usize,
    pub p2: usize,
    pub sqrt: SquareRootKind,
    /// Row factor with unit determinant.
    pub k1: Vec<Vec<f64>>,
    pub k2: Vec<Vec<f64>>,
    pub core: Vec<Vec<f64>>,
}

impl KcdDocument {
    pub fn new(r: &KcdResult, dims: Dims) -> Self {
        KcdDocument {
            p1: dims.p1,
            p2: dims.p2,
            sqrt: r.h_kind,
            k1: rows_of(&r.k.k1),
            k2: rows_of(&r.k.k2),
            core: rows_of(&r.core),
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, doc: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(f, doc)?;
    Ok(())
}
