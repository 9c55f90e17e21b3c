//! Observation matrices, ground truth, sample splits and matrix I/O.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngHandle;

/// Smallest sample count a selection run accepts: each half needs room for
/// two nonempty clusters.
pub const MIN_SAMPLES: usize = 4;

/// Dense `n x p` matrix, rows are samples and columns are features.
///
/// Storage is column-major so per-feature work reads contiguous memory.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: DMatrix<f64>,
}

impl DataMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::Data(format!(
                "matrix must be nonempty, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        for j in 0..values.ncols() {
            for i in 0..values.nrows() {
                if !values[(i, j)].is_finite() {
                    return Err(Error::NonFinite { row: i + 1, col: j + 1 });
                }
            }
        }
        Ok(DataMatrix { values })
    }

    /// Builds from a row-major buffer of length `n * p`.
    pub fn from_row_major(n: usize, p: usize, buf: &[f64]) -> Result<Self> {
        if buf.len() != n * p {
            return Err(Error::Data(format!(
                "buffer length {} does not match {n}x{p}",
                buf.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(n, p, buf))
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn column(&self, j: usize) -> &[f64] {
        let n = self.n();
        &self.values.as_slice()[j * n..(j + 1) * n]
    }

    pub fn row_major(&self) -> Vec<f64> {
        self.values.transpose().as_slice().to_vec()
    }

    pub fn select_rows(&self, rows: &[usize]) -> DataMatrix {
        DataMatrix {
            values: self.values.select_rows(rows),
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> DataMatrix {
        DataMatrix {
            values: self.values.select_columns(cols),
        }
    }

    pub fn transpose(&self) -> DataMatrix {
        DataMatrix {
            values: self.values.transpose(),
        }
    }

    pub(crate) fn from_trusted(values: DMatrix<f64>) -> DataMatrix {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        DataMatrix { values }
    }

    /// Checks the size requirements of a full selection run.
    pub fn check_selectable(&self) -> Result<()> {
        if self.n() < MIN_SAMPLES {
            return Err(Error::Data(format!(
                "need at least {MIN_SAMPLES} samples, got {}",
                self.n()
            )));
        }
        Ok(())
    }
}

/// Relevant and null feature sets (0-based indices).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub relevant: BTreeSet<usize>,
    pub null: BTreeSet<usize>,
}

impl GroundTruth {
    /// Features `0..p1` are relevant, the rest null.
    pub fn first_relevant(p: usize, p1: usize) -> Result<GroundTruth> {
        if p1 > p {
            return Err(Error::Config(format!("p1 = {p1} exceeds p = {p}")));
        }
        Ok(GroundTruth {
            relevant: (0..p1).collect(),
            null: (p1..p).collect(),
        })
    }

    pub fn p(&self) -> usize {
        self.relevant.len() + self.null.len()
    }
}

/// A partition of the sample indices into two halves.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub half1: Vec<usize>,
    pub half2: Vec<usize>,
    pub rng: RngHandle,
}

/// Uniformly random split of `0..n` into halves of sizes `floor(n/2)` and
/// `ceil(n/2)`; which half receives the extra sample is itself random.
pub fn random_split(n: usize, rng: RngHandle) -> Result<SplitPlan> {
    if n < MIN_SAMPLES {
        return Err(Error::Data(format!(
            "cannot split {n} samples, need at least {MIN_SAMPLES}"
        )));
    }
    let mut r = rng.rng();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut r);
    let first = if n % 2 == 1 && r.random_bool(0.5) {
        n / 2 + 1
    } else {
        n / 2
    };
    let mut half1 = idx[..first].to_vec();
    let mut half2 = idx[first..].to_vec();
    half1.sort_unstable();
    half2.sort_unstable();
    Ok(SplitPlan { half1, half2, rng })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Delimiter {
    #[default]
    Csv,
    Tsv,
}

impl Delimiter {
    fn byte(self) -> u8 {
        match self {
            Delimiter::Csv => b',',
            Delimiter::Tsv => b'\t',
        }
    }

    /// Guess from a file extension, defaulting to comma.
    pub fn from_path(path: &Path) -> Delimiter {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") | Some("tab") => Delimiter::Tsv,
            _ => Delimiter::Csv,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadOptions {
    pub format: Delimiter,
    pub has_header: bool,
    /// First column holds row labels.
    pub row_labels: bool,
    /// File stores features as rows; transpose after reading.
    pub transpose: bool,
}

/// A loaded matrix plus the labels that came with it.
#[derive(Debug, Clone)]
pub struct Table {
    pub matrix: DataMatrix,
    pub feature_names: Option<Vec<String>>,
    pub row_labels: Option<Vec<String>>,
}

/// Reads a matrix from `path`, or from stdin when `path` is `-`.
pub fn load_matrix(path: &Path, opts: &LoadOptions) -> Result<Table> {
    if path.as_os_str() == "-" {
        let stdin = std::io::stdin();
        return read_matrix(stdin.lock(), opts);
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_matrix(file, opts)
}

pub fn read_matrix<R: Read>(reader: R, opts: &LoadOptions) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(opts.format.byte())
        .has_headers(opts.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let skip = usize::from(opts.row_labels);
    let mut header = None;
    if opts.has_header {
        let h = rdr
            .headers()
            .map_err(|e| Error::Data(format!("cannot read header: {e}")))?;
        header = Some(h.iter().skip(skip).map(str::to_owned).collect::<Vec<_>>());
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut width: Option<usize> = None;
    let mut nrows = 0usize;
    for (r, record) in rdr.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| Error::Data(format!("row {row}: {e}")))?;
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::Ragged {
                row,
                found: record.len(),
                expected,
            });
        }
        if opts.row_labels {
            labels.push(record.get(0).unwrap_or_default().to_owned());
        }
        for (c, field) in record.iter().enumerate().skip(skip) {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row,
                col: c + 1,
                msg: format!("cannot parse {field:?} as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite { row, col: c + 1 });
            }
            values.push(v);
        }
        nrows += 1;
    }
    let ncols = width.unwrap_or(0).saturating_sub(skip);
    if nrows == 0 || ncols == 0 {
        return Err(Error::Data("input contains no numeric data".into()));
    }
    if let Some(h) = &header {
        if h.len() != ncols {
            return Err(Error::Ragged {
                row: 0,
                found: h.len() + skip,
                expected: ncols + skip,
            });
        }
    }
    let matrix = DataMatrix::from_row_major(nrows, ncols, &values)?;
    let row_labels = opts.row_labels.then_some(labels);
    if opts.transpose {
        Ok(Table {
            matrix: matrix.transpose(),
            feature_names: row_labels,
            row_labels: header,
        })
    } else {
        Ok(Table {
            matrix,
            feature_names: header,
            row_labels,
        })
    }
}

/// Writes the matrix with a header row of feature names (default `f1..fp`).
pub fn write_matrix<W: Write>(
    writer: W,
    matrix: &DataMatrix,
    feature_names: Option<&[String]>,
    delimiter: Delimiter,
) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(delimiter.byte())
        .from_writer(writer);
    let to_err = |e: csv::Error| Error::Data(format!("write failed: {e}"));
    match feature_names {
        Some(names) => w.write_record(names).map_err(to_err)?,
        None => w
            .write_record((1..=matrix.p()).map(|j| format!("f{j}")))
            .map_err(to_err)?,
    }
    let mut buf = Vec::with_capacity(matrix.p());
    for i in 0..matrix.n() {
        buf.clear();
        for j in 0..matrix.p() {
            buf.push(format_value(matrix.values()[(i, j)]));
        }
        w.write_record(&buf).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::Data(format!("write failed: {e}")))?;
    Ok(())
}

/// Shortest representation that round-trips; integers print without a
/// fractional part so count matrices stay compact.
pub fn format_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}
