//! Latent-variable estimation for one half of the data.
//!
//! Discrete two-class labels come from k-means (Lloyd iterations after
//! k-means++ seeding), optionally run on whitened data. Continuous labels
//! are the centered scores of the first principal component.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::rng::RngHandle;

pub const DEFAULT_RESTARTS: usize = 10;
pub const MAX_LLOYD_ITERATIONS: usize = 100;
const EIGEN_FLOOR: f64 = 1e-10;

/// Estimated latent variable for the samples of one half.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "values", rename_all = "snake_case")]
pub enum LatentLabels {
    /// Cluster labels in `{1, 2}`, both present.
    Discrete2(Vec<u8>),
    /// Centered pseudotime.
    Continuous(Vec<f64>),
}

impl LatentLabels {
    pub fn discrete(values: Vec<u8>) -> Result<Self> {
        if values.iter().any(|&v| v != 1 && v != 2) {
            return Err(Error::Data("discrete labels must be 1 or 2".into()));
        }
        if !values.contains(&1) || !values.contains(&2) {
            return Err(Error::Data("both clusters must be nonempty".into()));
        }
        Ok(LatentLabels::Discrete2(values))
    }

    /// Centers `values` (subtracting the mean) and wraps them.
    pub fn continuous(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("pseudotime must be finite and nonempty".into()));
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        values.iter_mut().for_each(|v| *v -= mean);
        Ok(LatentLabels::Continuous(values))
    }

    pub fn len(&self) -> usize {
        match self {
            LatentLabels::Discrete2(v) => v.len(),
            LatentLabels::Continuous(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, LatentLabels::Discrete2(_))
    }

    /// Swaps the two cluster names, or negates the pseudotime.
    pub fn flipped(&self) -> LatentLabels {
        match self {
            LatentLabels::Discrete2(v) => {
                LatentLabels::Discrete2(v.iter().map(|&l| 3 - l).collect())
            }
            LatentLabels::Continuous(v) => LatentLabels::Continuous(v.iter().map(|x| -x).collect()),
        }
    }

    /// Cluster sizes `(n1, n2)`; `None` for continuous labels.
    pub fn cluster_sizes(&self) -> Option<(usize, usize)> {
        match self {
            LatentLabels::Discrete2(v) => {
                let n1 = v.iter().filter(|&&l| l == 1).count();
                Some((n1, v.len() - n1))
            }
            LatentLabels::Continuous(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum CovSource {
    Identity,
    UserSupplied,
    EmpiricalRidge { lambda: f64 },
}

/// A resolved covariance matrix together with where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSpec {
    pub source: CovSource,
    pub matrix: DMatrix<f64>,
}

impl CovarianceSpec {
    pub fn identity(p: usize) -> CovarianceSpec {
        CovarianceSpec {
            source: CovSource::Identity,
            matrix: DMatrix::identity(p, p),
        }
    }

    pub fn user_supplied(matrix: DMatrix<f64>) -> Result<CovarianceSpec> {
        check_symmetric(&matrix)?;
        Ok(CovarianceSpec {
            source: CovSource::UserSupplied,
            matrix,
        })
    }

    pub fn p(&self) -> usize {
        self.matrix.nrows()
    }

    /// Symmetric inverse square root. Eigenvalues are floored at 1e-10;
    /// a nonpositive eigenvalue is an error.
    pub fn inverse_sqrt(&self) -> Result<DMatrix<f64>> {
        let eig = SymmetricEigen::new(self.matrix.clone());
        let min = eig.eigenvalues.min();
        if min <= 0.0 {
            return Err(Error::Numeric(format!(
                "covariance is not positive definite (smallest eigenvalue {min:e})"
            )));
        }
        let scale = eig.eigenvalues.map(|l| 1.0 / l.max(EIGEN_FLOOR).sqrt());
        let v = &eig.eigenvectors;
        Ok(v * DMatrix::from_diagonal(&scale) * v.transpose())
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.matrix.clone()).eigenvalues.min()
    }

    fn is_exact_identity(&self) -> bool {
        matches!(self.source, CovSource::Identity) || self.matrix == DMatrix::identity(self.p(), self.p())
    }
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Config(format!(
            "covariance must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let p = m.nrows();
    for i in 0..p {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-8 {
                return Err(Error::Config(format!(
                    "covariance not symmetric at ({}, {})",
                    i + 1,
                    j + 1
                )));
            }
        }
    }
    Ok(())
}

/// `(1/(n-1)) * Xc' Xc + lambda * I` with `Xc` the column-centered data.
pub fn empirical_covariance(data: &DataMatrix, ridge: f64) -> Result<CovarianceSpec> {
    if data.n() < 2 {
        return Err(Error::Data("covariance needs at least 2 samples".into()));
    }
    if !(ridge >= 0.0) {
        return Err(Error::Config(format!("ridge must be nonnegative, got {ridge}")));
    }
    let xc = centered(data.values());
    let mut cov = xc.tr_mul(&xc) / (data.n() as f64 - 1.0);
    for i in 0..cov.nrows() {
        cov[(i, i)] += ridge;
    }
    // symmetrize away rounding
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(CovarianceSpec {
        source: CovSource::EmpiricalRidge { lambda: ridge },
        matrix: cov,
    })
}

fn centered(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut xc = x.clone();
    for mut col in xc.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    xc
}

/// Precomputed whitening transform, so repeated halves share one
/// eigendecomposition.
#[derive(Debug, Clone)]
pub struct Whitener {
    inv_sqrt: Option<DMatrix<f64>>,
    pub source: CovSource,
}

impl Whitener {
    pub fn new(cov: &CovarianceSpec) -> Result<Whitener> {
        let inv_sqrt = if cov.is_exact_identity() {
            None
        } else {
            Some(cov.inverse_sqrt()?)
        };
        Ok(Whitener {
            inv_sqrt,
            source: cov.source,
        })
    }

    pub fn apply(&self, data: &DataMatrix) -> Result<DataMatrix> {
        match &self.inv_sqrt {
            None => Ok(data.clone()),
            Some(w) => {
                if w.nrows() != data.p() {
                    return Err(Error::Config(format!(
                        "covariance is {0}x{0} but data has {1} features",
                        w.nrows(),
                        data.p()
                    )));
                }
                Ok(DataMatrix::from_trusted(data.values() * w))
            }
        }
    }
}

/// Returns `X * Sigma^{-1/2}`, i.e. every row left-multiplied by the
/// symmetric inverse square root.
pub fn whiten(data: &DataMatrix, cov: &CovarianceSpec) -> Result<DataMatrix> {
    Whitener::new(cov)?.apply(data)
}

/// Result of a two-cluster k-means fit.
#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub labels: LatentLabels,
    /// Within-cluster sum of squares of the winning restart.
    pub wcss: f64,
    pub centroids: [Vec<f64>; 2],
    pub iterations: usize,
    /// Objective after every Lloyd update of the winning restart.
    pub objective_trace: Vec<f64>,
}

impl KMeansFit {
    /// Unit vector along `centroid1 - centroid2`.
    pub fn direction(&self) -> Vec<f64> {
        let d: Vec<f64> = self.centroids[0]
            .iter()
            .zip(&self.centroids[1])
            .map(|(a, b)| a - b)
            .collect();
        let norm = dot(&d, &d).sqrt();
        d.into_iter().map(|x| x / norm).collect()
    }
}

pub fn kmeans2(data: &DataMatrix, rng: RngHandle, restarts: usize) -> Result<LatentLabels> {
    kmeans2_fit(data, rng, restarts).map(|f| f.labels)
}

/// k = 2 k-means: best of `restarts` k-means++ seeded Lloyd runs by
/// within-cluster sum of squares.
pub fn kmeans2_fit(data: &DataMatrix, rng: RngHandle, restarts: usize) -> Result<KMeansFit> {
    let n = data.n();
    if n < 2 {
        return Err(Error::Data(format!("k-means needs at least 2 samples, got {n}")));
    }
    let restarts = restarts.max(1);
    let rows = RowMajor::new(data);
    let mut r = rng.rng();
    let mut best: Option<LloydRun> = None;
    for _ in 0..restarts {
        let (a, b) = kmeanspp_seeds(&rows, &mut r)?;
        let run = lloyd(&rows, a, b);
        if best.as_ref().is_none_or(|cur| run.wcss < cur.wcss) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one restart");
    // name the cluster holding the first sample "1"
    let first = best.assign[0];
    let labels: Vec<u8> = best
        .assign
        .iter()
        .map(|&a| if a == first { 1 } else { 2 })
        .collect();
    let centroids = if first == 0 {
        [best.c1, best.c2]
    } else {
        [best.c2, best.c1]
    };
    Ok(KMeansFit {
        labels: LatentLabels::discrete(labels)?,
        wcss: best.wcss,
        centroids,
        iterations: best.iterations,
        objective_trace: best.trace,
    })
}

struct RowMajor {
    n: usize,
    p: usize,
    data: Vec<f64>,
    sq_norms: Vec<f64>,
    total: Vec<f64>,
}

impl RowMajor {
    fn new(m: &DataMatrix) -> RowMajor {
        let (n, p) = (m.n(), m.p());
        let data = m.row_major();
        let sq_norms = data.chunks_exact(p).map(|r| dot(r, r)).collect();
        let mut total = vec![0.0; p];
        for row in data.chunks_exact(p) {
            axpy(1.0, row, &mut total);
        }
        RowMajor {
            n,
            p,
            data,
            sq_norms,
            total,
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.p..(i + 1) * self.p]
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[2]) + (acc[1] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeanspp_seeds<R: Rng>(rows: &RowMajor, r: &mut R) -> Result<(usize, usize)> {
    let a = r.random_range(0..rows.n);
    let c = rows.row(a);
    let d2: Vec<f64> = (0..rows.n).map(|i| sq_dist(rows.row(i), c)).collect();
    let total: f64 = d2.iter().sum();
    if total <= 0.0 {
        return Err(Error::Degenerate);
    }
    let target = r.random::<f64>() * total;
    let mut acc = 0.0;
    let mut b = None;
    for (i, &d) in d2.iter().enumerate() {
        if d <= 0.0 {
            continue;
        }
        acc += d;
        b = Some(i);
        if acc > target {
            break;
        }
    }
    Ok((a, b.expect("some row has positive distance")))
}

struct LloydRun {
    assign: Vec<u8>,
    c1: Vec<f64>,
    c2: Vec<f64>,
    wcss: f64,
    iterations: usize,
    trace: Vec<f64>,
}

/// Lloyd iterations from seeds `a`, `b`. Cluster sums are updated
/// incrementally from the rows that moved.
fn lloyd(rows: &RowMajor, a: usize, b: usize) -> LloydRun {
    let (n, p) = (rows.n, rows.p);
    let mut c1 = rows.row(a).to_vec();
    let mut c2 = rows.row(b).to_vec();
    // 0 = cluster of c1, 1 = cluster of c2; start with everything unassigned
    // in cluster 1 and let the first pass move rows.
    let mut assign = vec![1u8; n];
    let mut sum1 = vec![0.0; p];
    let mut n1 = 0usize;
    let sum_sq: f64 = rows.sq_norms.iter().sum();
    let mut trace: Vec<f64> = Vec::new();
    let mut diff = vec![0.0; p];
    let mut iterations = 0;

    for it in 0..MAX_LLOYD_ITERATIONS {
        iterations = it + 1;
        for k in 0..p {
            diff[k] = c1[k] - c2[k];
        }
        let thresh = 0.5 * (dot(&c1, &c1) - dot(&c2, &c2));
        let mut changed = 0usize;
        for i in 0..n {
            let row = rows.row(i);
            let to = if dot(row, &diff) >= thresh { 0u8 } else { 1u8 };
            if to != assign[i] {
                changed += 1;
                if to == 0 {
                    axpy(1.0, row, &mut sum1);
                    n1 += 1;
                } else {
                    axpy(-1.0, row, &mut sum1);
                    n1 -= 1;
                }
                assign[i] = to;
            }
        }
        if changed == 0 {
            break;
        }
        if n1 == 0 || n1 == n {
            // refill the empty cluster with the row farthest from the other centroid
            let (from, other) = if n1 == 0 { (1u8, &c2) } else { (0u8, &c1) };
            let far = (0..n)
                .filter(|&i| assign[i] == from)
                .max_by(|&i, &j| {
                    sq_dist(rows.row(i), other).total_cmp(&sq_dist(rows.row(j), other))
                })
                .expect("nonempty cluster");
            if from == 1 {
                axpy(1.0, rows.row(far), &mut sum1);
                n1 += 1;
                assign[far] = 0;
            } else {
                axpy(-1.0, rows.row(far), &mut sum1);
                n1 -= 1;
                assign[far] = 1;
            }
        }
        let n2 = n - n1;
        for k in 0..p {
            c1[k] = sum1[k] / n1 as f64;
            c2[k] = (rows.total[k] - sum1[k]) / n2 as f64;
        }
        let obj = sum_sq - n1 as f64 * dot(&c1, &c1) - n2 as f64 * dot(&c2, &c2);
        if let Some(&prev) = trace.last() {
            debug_assert!(
                obj <= prev + 1e-9 * prev.abs().max(1.0),
                "k-means objective increased: {prev} -> {obj}"
            );
        }
        trace.push(obj);
    }

    // exact objective for comparing restarts
    let wcss = (0..n)
        .map(|i| sq_dist(rows.row(i), if assign[i] == 0 { &c1 } else { &c2 }))
        .sum();
    LloydRun {
        assign,
        c1,
        c2,
        wcss,
        iterations,
        trace,
    }
}

/// Centered first-principal-component scores.
///
/// The leading eigenvector of the sample covariance is found by power
/// iteration on `Xc' Xc`; its sign is fixed so the first nonzero loading
/// is positive.
pub fn first_pc_pseudotime(data: &DataMatrix) -> Result<LatentLabels> {
    first_pc(data).map(|(scores, _)| scores)
}

/// Scores and unit loading vector of the first principal component.
pub fn first_pc(data: &DataMatrix) -> Result<(LatentLabels, Vec<f64>)> {
    const MAX_ITER: usize = 1000;
    const TOL: f64 = 1e-10;
    if data.n() < 2 {
        return Err(Error::Data("pseudotime needs at least 2 samples".into()));
    }
    let xc = centered(data.values());
    let sd: Vec<f64> = xc.column_iter().map(|c| c.norm()).collect();
    let max_sd = sd.iter().cloned().fold(0.0, f64::max);
    if max_sd <= 1e-12 * (1.0 + data.values().amax()) {
        return Err(Error::Degenerate);
    }
    let mut v = DVector::from_vec(sd);
    v /= v.norm();
    for _ in 0..MAX_ITER {
        let u = &xc * &v;
        let mut w = xc.tr_mul(&u);
        let norm = w.norm();
        if norm == 0.0 {
            return Err(Error::Degenerate);
        }
        w /= norm;
        let delta = (&w - &v).norm();
        v = w;
        if delta < TOL {
            break;
        }
    }
    let vmax = v.amax();
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-12 * vmax) {
        if *first < 0.0 {
            v.neg_mut();
        }
    }
    let scores = &xc * &v;
    Ok((LatentLabels::continuous(scores.as_slice().to_vec())?, v.as_slice().to_vec()))
}
