//! Replicate runner: FDP/power against ground truth, experiment grids and
//! CSV output.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assoc::test_all_features;
use crate::cluster::{CovarianceSpec, Whitener};
use crate::data::{DataMatrix, GroundTruth};
use crate::error::{Error, Result};
use crate::mds::{select_mds, split_handle, MdsConfig};
use crate::mirror::{check_q, estimate_latent, select_ds, SelectConfig, WhiteningMode};
use crate::rng::RngHandle;
use crate::simgen::{gen_gaussian, gen_poisson, GaussianSimCfg, LatentKind, NoiseMode, PoissonSimCfg, SimOutput};

fn check_range(selected: &[usize], truth: &GroundTruth) -> Result<()> {
    let p = truth.p();
    if let Some(&j) = selected.iter().find(|&&j| j >= p) {
        return Err(Error::Data(format!("selected index {j} out of range for p = {p}")));
    }
    Ok(())
}

/// `|S_0 & S| / max(|S|, 1)`.
pub fn fdp(selected: &[usize], truth: &GroundTruth) -> Result<f64> {
    check_range(selected, truth)?;
    let set: BTreeSet<usize> = selected.iter().copied().collect();
    let false_pos = set.iter().filter(|j| truth.null.contains(j)).count();
    Ok(false_pos as f64 / set.len().max(1) as f64)
}

/// `|S_1 & S| / |S_1|`.
pub fn power(selected: &[usize], truth: &GroundTruth) -> Result<f64> {
    check_range(selected, truth)?;
    if truth.relevant.is_empty() {
        return Err(Error::Data("power is undefined without relevant features".into()));
    }
    let set: BTreeSet<usize> = selected.iter().copied().collect();
    let hits = set.iter().filter(|j| truth.relevant.contains(j)).count();
    Ok(hits as f64 / truth.relevant.len() as f64)
}

/// Benjamini-Hochberg step-up at level `q`; returns ascending indices.
pub fn benjamini_hochberg(pvalues: &[f64], q: f64) -> Vec<usize> {
    let p = pvalues.len();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| pvalues[a].total_cmp(&pvalues[b]).then(a.cmp(&b)));
    let k = (1..=p)
        .rev()
        .find(|&k| pvalues[order[k - 1]] <= q * k as f64 / p as f64)
        .unwrap_or(0);
    let mut sel = order[..k].to_vec();
    sel.sort_unstable();
    sel
}

/// How the naive baseline turns p-values into a selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoubleDipRule {
    #[default]
    Bh,
    /// Every feature with `p <= q`, no multiplicity correction.
    RawThreshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoubleDipResult {
    pub selected: Vec<usize>,
    pub pvalues: Vec<f64>,
}

/// Clusters (or fits pseudotime on) the full data, tests every feature on
/// the same data and applies BH or a raw threshold.
pub fn double_dip_baseline(
    data: &DataMatrix,
    cfg: &SelectConfig,
    rule: DoubleDipRule,
    rng: RngHandle,
) -> Result<DoubleDipResult> {
    cfg.validate(Some(data.p()))?;
    data.check_selectable()?;
    let latent = estimate_latent(data, cfg, rng)?;
    let stats = test_all_features(data, &latent, &cfg.test, 0).map_err(|e| e.at_stage("testing"))?;
    let pvalues = stats.two_sided_pvalues();
    let selected = match rule {
        DoubleDipRule::Bh => benjamini_hochberg(&pvalues, cfg.q),
        DoubleDipRule::RawThreshold => (0..pvalues.len()).filter(|&j| pvalues[j] <= cfg.q).collect(),
    };
    Ok(DoubleDipResult { selected, pvalues })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Ds,
    Mds,
    DoubleDip,
}

/// A selection method in a grid. `name` labels its CSV rows and keys its
/// random stream, so it must be unique within a grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub name: String,
    pub kind: MethodKind,
    #[serde(default)]
    pub select: SelectConfig,
    #[serde(default)]
    pub mds: MdsConfig,
    #[serde(default)]
    pub double_dip_rule: DoubleDipRule,
}

impl MethodSpec {
    pub fn new(name: &str, kind: MethodKind, select: SelectConfig) -> MethodSpec {
        MethodSpec {
            name: name.to_string(),
            kind,
            select,
            mds: MdsConfig::default(),
            double_dip_rule: DoubleDipRule::Bh,
        }
    }

    /// Runs the method and returns its 0-based selection.
    pub fn run(&self, data: &DataMatrix, cfg: &SelectConfig, rng: RngHandle) -> Result<Vec<usize>> {
        match self.kind {
            MethodKind::Ds => select_ds(data, cfg, split_handle(&rng, 0)).map(|r| r.selected),
            MethodKind::Mds => select_mds(data, cfg, &self.mds, rng).map(|r| r.selected),
            MethodKind::DoubleDip => double_dip_baseline(data, cfg, self.double_dip_rule, rng).map(|r| r.selected),
        }
    }
}

/// Generator template; the grid overrides `delta`, `rho` and `sigma_eps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelTemplate {
    Gaussian(GaussianSimCfg),
    Poisson(PoissonSimCfg),
    Trajectory(PoissonSimCfg),
}

impl ModelTemplate {
    pub fn name(&self) -> &'static str {
        match self {
            ModelTemplate::Gaussian(_) => "gaussian",
            ModelTemplate::Poisson(_) => "poisson",
            ModelTemplate::Trajectory(_) => "trajectory",
        }
    }

    pub fn with_cell(&self, cell: &Cell) -> ModelTemplate {
        let mut m = self.clone();
        match &mut m {
            ModelTemplate::Gaussian(c) => {
                c.delta = cell.delta;
                c.rho = cell.rho;
                c.sigma_eps = cell.sigma_eps;
            }
            ModelTemplate::Poisson(c) | ModelTemplate::Trajectory(c) => {
                c.delta = cell.delta;
                c.rho = cell.rho;
                c.sigma_eps = cell.sigma_eps;
            }
        }
        m
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelTemplate::Gaussian(c) => c.validate(),
            ModelTemplate::Poisson(c) | ModelTemplate::Trajectory(c) => c.validate(),
        }
    }

    pub fn generate(&self, rng: RngHandle) -> Result<SimOutput> {
        match self {
            ModelTemplate::Gaussian(c) => gen_gaussian(c, rng),
            ModelTemplate::Poisson(c) => gen_poisson(c, rng, LatentKind::Bernoulli),
            ModelTemplate::Trajectory(c) => gen_poisson(c, rng, LatentKind::Trajectory),
        }
    }

    /// Covariance of the Gaussian layer given the latent label, used for
    /// whitening with a known covariance.
    pub fn noise_covariance(&self) -> Result<CovarianceSpec> {
        match self {
            ModelTemplate::Gaussian(c) => {
                let s2 = c.sigma_eps * c.sigma_eps;
                let m = DMatrix::from_fn(c.p, c.p, |i, j| {
                    let ar = c.rho.powi(i.abs_diff(j) as i32);
                    let eps = match c.noise {
                        NoiseMode::PerFeature if i == j => s2,
                        NoiseMode::PerFeature => 0.0,
                        NoiseMode::SharedShift => s2,
                    };
                    ar + eps
                });
                CovarianceSpec::user_supplied(m)
            }
            _ => Err(Error::Config(
                "known-covariance whitening is only defined for the gaussian model".into(),
            )),
        }
    }
}

/// Swept axes, replicate count and root seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentGrid {
    pub template: ModelTemplate,
    pub deltas: Vec<f64>,
    pub rhos: Vec<f64>,
    pub sigma_eps: Vec<f64>,
    pub qs: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub index: usize,
    pub delta: f64,
    pub rho: f64,
    pub sigma_eps: f64,
    pub q: f64,
}

impl ExperimentGrid {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if self.deltas.is_empty() || self.rhos.is_empty() || self.sigma_eps.is_empty() || self.qs.is_empty() {
            return Err(Error::Config("every grid axis needs at least one value".into()));
        }
        for &q in &self.qs {
            check_q(q)?;
        }
        for cell in self.cells() {
            self.template.with_cell(&cell).validate()?;
        }
        Ok(())
    }

    /// Cells in row-major order over (delta, rho, sigma_eps, q).
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &delta in &self.deltas {
            for &rho in &self.rhos {
                for &sigma_eps in &self.sigma_eps {
                    for &q in &self.qs {
                        out.push(Cell {
                            index: out.len(),
                            delta,
                            rho,
                            sigma_eps,
                            q,
                        });
                    }
                }
            }
        }
        out
    }
}

/// Stream of replicate `rep` in cell `cell`.
pub fn replicate_handle(seed: u64, cell: usize, rep: usize) -> RngHandle {
    RngHandle::new(seed).child(cell as u64).child(rep as u64)
}

/// Stream the data of a replicate are generated from.
pub fn data_handle(seed: u64, cell: usize, rep: usize) -> RngHandle {
    replicate_handle(seed, cell, rep).child_named("data")
}

/// Stream a method consumes in a replicate; keyed by name so method order
/// does not matter.
pub fn method_handle(seed: u64, cell: usize, rep: usize, method: &str) -> RngHandle {
    replicate_handle(seed, cell, rep).child_named(&format!("method:{method}"))
}

/// Per-replicate outcome of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub fdp: f64,
    pub power: Option<f64>,
    pub selected: usize,
    pub runtime_s: f64,
    pub error: Option<String>,
}

/// Aggregate over replicates for one (cell, method).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub cell: Cell,
    pub model: String,
    pub method: String,
    pub mean_fdp: f64,
    pub sd_fdp: f64,
    /// `None` when the cell has no relevant features.
    pub mean_power: Option<f64>,
    pub sd_power: Option<f64>,
    pub mean_selected: f64,
    pub runtime_s: f64,
    /// Replicates whose method run failed (scored as empty selections).
    pub failed: usize,
    /// Fraction of replicates with a nonempty selection.
    pub nonempty_rate: f64,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl MetricRow {
    pub fn from_outcomes(cell: Cell, model: &str, method: &str, outs: &[ReplicateOutcome]) -> MetricRow {
        let fdps: Vec<f64> = outs.iter().map(|o| o.fdp).collect();
        let (mean_fdp, sd_fdp) = mean_sd(&fdps);
        let powers: Option<Vec<f64>> = outs.iter().map(|o| o.power).collect();
        let (mean_power, sd_power) = match powers {
            Some(p) => {
                let (m, s) = mean_sd(&p);
                (Some(m), Some(s))
            }
            None => (None, None),
        };
        let sizes: Vec<f64> = outs.iter().map(|o| o.selected as f64).collect();
        MetricRow {
            cell,
            model: model.to_string(),
            method: method.to_string(),
            mean_fdp,
            sd_fdp,
            mean_power,
            sd_power,
            mean_selected: mean_sd(&sizes).0,
            runtime_s: outs.iter().map(|o| o.runtime_s).sum::<f64>() / outs.len() as f64,
            failed: outs.iter().filter(|o| o.error.is_some()).count(),
            nonempty_rate: outs.iter().filter(|o| o.selected > 0).count() as f64 / outs.len() as f64,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    /// Worker threads; `None` uses the available parallelism.
    pub threads: Option<usize>,
    /// Record wall-clock runtimes. Off by default so output bytes depend only
    /// on the configuration.
    pub timing: bool,
}

fn check_methods(methods: &[MethodSpec]) -> Result<()> {
    if methods.is_empty() {
        return Err(Error::Config("at least one method is required".into()));
    }
    let mut seen = BTreeSet::new();
    for m in methods {
        if !seen.insert(m.name.as_str()) {
            return Err(Error::Config(format!("duplicate method name {:?}", m.name)));
        }
        m.mds.validate()?;
        let mut cfg = m.select.clone();
        cfg.whitener = None;
        if cfg.whitening == WhiteningMode::Known {
            // resolved per cell from the generator
            cfg.whitening = WhiteningMode::None;
        }
        cfg.validate(None)?;
    }
    Ok(())
}

/// Score a selection against the truth.
pub fn score(selected: &[usize], truth: &GroundTruth) -> Result<(f64, Option<f64>)> {
    let f = fdp(selected, truth)?;
    let p = if truth.relevant.is_empty() {
        None
    } else {
        Some(power(selected, truth)?)
    };
    Ok((f, p))
}

/// Runs every (cell, replicate, method) and aggregates by (cell, method).
///
/// Each (cell, replicate) draws one dataset shared by all methods. Results
/// depend only on the grid, the methods and the seed.
pub fn run_grid(grid: &ExperimentGrid, methods: &[MethodSpec], opts: &RunOptions) -> Result<Vec<MetricRow>> {
    grid.validate()?;
    check_methods(methods)?;
    let cells = grid.cells();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = opts.threads {
        if t == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        pool = pool.num_threads(t);
    }
    let pool = pool.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    // one whitener per cell for methods whitening with the true covariance
    let needs_known = methods.iter().any(|m| m.select.whitening == WhiteningMode::Known && m.select.whitener.is_none());
    let whiteners: Vec<Option<Arc<Whitener>>> = cells
        .iter()
        .map(|c| {
            if !needs_known {
                return Ok(None);
            }
            let cov = grid.template.with_cell(c).noise_covariance()?;
            Ok(Some(Arc::new(Whitener::new(&cov)?)))
        })
        .collect::<Result<_>>()?;

    let units: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..grid.replicates).map(move |r| (c, r)))
        .collect();
    let results: Vec<Result<Vec<ReplicateOutcome>>> = pool.install(|| {
        units
            .par_iter()
            .map(|&(c, r)| {
                let cell = &cells[c];
                let sim = grid.template.with_cell(cell).generate(data_handle(grid.seed, c, r))?;
                let outs = methods
                    .iter()
                    .map(|m| {
                        let mut cfg = m.select.clone();
                        cfg.q = cell.q;
                        if cfg.whitening == WhiteningMode::Known && cfg.whitener.is_none() {
                            cfg.whitener = whiteners[c].clone();
                        }
                        let start = Instant::now();
                        let run = m.run(&sim.data, &cfg, method_handle(grid.seed, c, r, &m.name));
                        let runtime_s = if opts.timing { start.elapsed().as_secs_f64() } else { 0.0 };
                        let (selected, error) = match run {
                            Ok(s) => (s, None),
                            Err(e) => (Vec::new(), Some(e.to_string())),
                        };
                        let (fdp, power) = score(&selected, &sim.truth)?;
                        Ok(ReplicateOutcome {
                            fdp,
                            power,
                            selected: selected.len(),
                            runtime_s,
                            error,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(outs)
            })
            .collect()
    });

    let mut by_key: BTreeMap<(usize, usize), Vec<ReplicateOutcome>> = BTreeMap::new();
    for (&(c, _), res) in units.iter().zip(results) {
        for (mi, o) in res?.into_iter().enumerate() {
            by_key.entry((c, mi)).or_default().push(o);
        }
    }
    Ok(by_key
        .into_iter()
        .map(|((c, mi), outs)| MetricRow::from_outcomes(cells[c], grid.template.name(), &methods[mi].name, &outs))
        .collect())
}

pub const CSV_HEADER: [&str; 16] = [
    "cell", "model", "delta", "rho", "sigma_eps", "q", "method", "mean_fdp", "sd_fdp", "mean_power", "sd_power",
    "mean_selected", "runtime_s", "failed", "nonempty_rate", "replicates",
];

/// Writes rows in long format, one line per (cell, method).
pub fn write_csv<W: Write>(rows: &[MetricRow], replicates: usize, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Data(format!("writing CSV: {e}"));
    w.write_record(CSV_HEADER).map_err(io)?;
    let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
    for r in rows {
        w.write_record([
            r.cell.index.to_string(),
            r.model.clone(),
            r.cell.delta.to_string(),
            r.cell.rho.to_string(),
            r.cell.sigma_eps.to_string(),
            r.cell.q.to_string(),
            r.method.clone(),
            r.mean_fdp.to_string(),
            r.sd_fdp.to_string(),
            opt(r.mean_power),
            opt(r.sd_power),
            r.mean_selected.to_string(),
            r.runtime_s.to_string(),
            r.failed.to_string(),
            r.nonempty_rate.to_string(),
            replicates.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::Data(format!("writing CSV: {e}")))?;
    Ok(())
}
