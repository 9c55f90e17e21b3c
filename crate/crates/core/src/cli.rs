//! Command-line interface: `simulate`, `select`, `theory` and `bench`.
//!
//! Every subcommand also reads a TOML file (`--config`) with the same keys as
//! its long flags (dashes become underscores); flags win over the file.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::assoc::{TestConfig, TestKind};
use crate::bench::{
    double_dip_baseline, run_grid, write_csv, DoubleDipRule, ExperimentGrid, MethodSpec, ModelTemplate, RunOptions,
};
use crate::cluster::{CovarianceSpec, Whitener};
use crate::data::{load_matrix, write_matrix, DataMatrix, Delimiter, LoadOptions};
use crate::error::{Error, Result};
use crate::mds::{select_mds, split_handle, Estimator, MdsConfig, TieRule};
use crate::mirror::{select_ds, Combiner, LatentMethod, SelectConfig, WhiteningMode};
use crate::rng::RngHandle;
use crate::simgen::{gen_gaussian, gen_poisson, GaussianSimCfg, LatentKind, NoiseMode, PoissonSimCfg};
use crate::theory;

/// Parses a value through its serde name, accepting dashes for underscores.
fn parse_name<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(Value::String(s.replace('-', "_"))).map_err(|e| e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "splitfdr", version, about = "FDR-controlled feature selection after clustering via data splitting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic matrix and its ground truth.
    Simulate(SimulateArgs),
    /// Select features from a matrix with DS, MDS or the double-dipping baseline.
    Select(SelectArgs),
    /// Print mis-clustering error, power and bounds for a two-Gaussian model.
    Theory(TheoryArgs),
    /// Run an experiment grid and write a metrics CSV.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Gaussian,
    Poisson,
    Trajectory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ds,
    Mds,
    DoubleDip,
}

macro_rules! merge_fields {
    ($a:ident, $b:ident; $($f:ident),* $(,)?) => {
        $( if $a.$f.is_none() { $a.$f = $b.$f.take(); } )*
    };
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))
}

fn required<T>(v: Option<T>, name: &str) -> Result<T> {
    v.ok_or_else(|| Error::Config(format!("missing required setting `{name}`")))
}

fn create_output(path: &Path) -> Result<Box<dyn Write>> {
    if path.as_os_str() == "-" {
        return Ok(Box::new(BufWriter::new(std::io::stdout().lock())));
    }
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(Box::new(BufWriter::new(f)))
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut w = create_output(path)?;
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Data(e.to_string()))?;
    writeln!(w, "{text}").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn set_threads(threads: Option<usize>) -> Result<()> {
    if let Some(t) = threads {
        if t == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    Ok(())
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateArgs {
    /// TOML file with defaults for any of the flags below.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// gaussian, poisson or trajectory.
    #[arg(long, value_parser = parse_name::<Model>)]
    pub model: Option<Model>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    /// Number of relevant features (the first p1 columns).
    #[arg(long)]
    pub p1: Option<usize>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub sigma_eps: Option<f64>,
    #[arg(long)]
    pub class_prob: Option<f64>,
    /// Poisson intercept (default log 3).
    #[arg(long)]
    pub beta0: Option<f64>,
    /// per_feature or shared_shift.
    #[arg(long, value_parser = parse_name::<NoiseMode>)]
    pub noise: Option<NoiseMode>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Matrix output path, `-` for stdout.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Truth/latent JSON path (default: output path with `.truth.json`).
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

impl SimulateArgs {
    fn merged(mut self) -> Result<Self> {
        let mut f: SimulateArgs = read_config(self.config.as_deref())?;
        merge_fields!(self, f; model, n, p, p1, delta, rho, sigma_eps, class_prob, beta0, noise, seed, out, truth);
        Ok(self)
    }
}

fn truth_path(out: &Path) -> PathBuf {
    out.with_extension("truth.json")
}

pub fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let a = args.merged()?;
    let model = a.model.unwrap_or(Model::Gaussian);
    let n = required(a.n, "n")?;
    let p = required(a.p, "p")?;
    let p1 = a.p1.unwrap_or(0);
    let seed = a.seed.unwrap_or(0);
    let out = a.out.clone().unwrap_or_else(|| PathBuf::from("-"));
    let rng = RngHandle::new(seed);
    let (sim, cfg_json) = match model {
        Model::Gaussian => {
            let mut c = GaussianSimCfg::new(n, p, p1, a.delta.unwrap_or(0.0));
            c.rho = a.rho.unwrap_or(0.0);
            c.sigma_eps = a.sigma_eps.unwrap_or(0.0);
            c.class_prob = a.class_prob.unwrap_or(0.5);
            c.noise = a.noise.unwrap_or_default();
            if a.beta0.is_some() {
                return Err(Error::Config("beta0 applies to the count models only".into()));
            }
            c.validate()?;
            (gen_gaussian(&c, rng)?, serde_json::to_value(&c))
        }
        Model::Poisson | Model::Trajectory => {
            let mut c = PoissonSimCfg::new(n, p, p1, a.delta.unwrap_or(0.0));
            c.rho = a.rho.unwrap_or(0.0);
            c.sigma_eps = a.sigma_eps.unwrap_or(0.0);
            c.class_prob = a.class_prob.unwrap_or(0.5);
            c.noise = a.noise.unwrap_or_default();
            if let Some(b) = a.beta0 {
                c.beta0 = b;
            }
            c.validate()?;
            let kind = if model == Model::Poisson {
                LatentKind::Bernoulli
            } else {
                LatentKind::Trajectory
            };
            (gen_poisson(&c, rng, kind)?, serde_json::to_value(&c))
        }
    };
    let cfg_json = cfg_json.map_err(|e| Error::Data(e.to_string()))?;
    let model_name = serde_json::to_value(model).map_err(|e| Error::Data(e.to_string()))?;
    let sidecar = sim.sidecar(model_name.as_str().unwrap_or("gaussian"), cfg_json, seed);

    let mut w = create_output(&out)?;
    write_matrix(&mut w, &sim.data, None, Delimiter::from_path(&out))?;
    w.flush().map_err(|e| Error::io(&out, e))?;
    drop(w);
    let truth = match (&a.truth, out.as_os_str() == "-") {
        (Some(t), _) => Some(t.clone()),
        (None, false) => Some(truth_path(&out)),
        (None, true) => None,
    };
    if let Some(t) = truth {
        write_json(&t, &sidecar)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- select

#[derive(Debug, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Input matrix (samples as rows), `-` for stdin.
    #[arg(long, short)]
    pub input: Option<PathBuf>,
    /// Report path, `-` (default) for stdout.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// ds, mds or double_dip.
    #[arg(long, value_parser = parse_name::<Method>)]
    pub method: Option<Method>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub q: Option<f64>,
    /// Number of splits for MDS.
    #[arg(long)]
    pub m: Option<usize>,
    /// weighted or simple inclusion rates.
    #[arg(long, value_parser = parse_name::<Estimator>)]
    pub estimator: Option<Estimator>,
    /// keep_top, strict or positional handling of ties at the MDS cutoff.
    #[arg(long, value_parser = parse_name::<TieRule>)]
    pub tie_rule: Option<TieRule>,
    /// kmeans or pseudotime.
    #[arg(long, value_parser = parse_name::<LatentMethod>)]
    pub latent: Option<LatentMethod>,
    /// welch_t, z_known_var, wilcoxon_signed or pois_glm_wald.
    #[arg(long, value_parser = parse_name::<TestKind>)]
    pub test: Option<TestKind>,
    /// Noise standard deviations for z_known_var: one value or one per feature.
    #[arg(long, value_delimiter = ',')]
    pub known_sigma: Option<Vec<f64>>,
    #[arg(long)]
    pub glm_max_iter: Option<usize>,
    #[arg(long)]
    pub glm_tol: Option<f64>,
    #[arg(long)]
    pub restarts: Option<usize>,
    /// none, known (needs --covariance) or empirical.
    #[arg(long, value_parser = parse_name::<WhiteningMode>)]
    pub whitening: Option<WhiteningMode>,
    /// Ridge added to the empirical covariance.
    #[arg(long)]
    pub ridge: Option<f64>,
    /// p x p covariance matrix CSV for known whitening.
    #[arg(long)]
    pub covariance: Option<PathBuf>,
    /// sum, product or min.
    #[arg(long, value_parser = parse_name::<Combiner>)]
    pub combiner: Option<Combiner>,
    /// bh or raw_threshold, for the double-dipping baseline.
    #[arg(long, value_parser = parse_name::<DoubleDipRule>)]
    pub double_dip_rule: Option<DoubleDipRule>,
    /// csv or tsv (default: from the extension).
    #[arg(long, value_parser = parse_name::<Delimiter>)]
    pub format: Option<Delimiter>,
    /// Whether the first row holds feature names (default true).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub header: Option<bool>,
    /// First column holds sample labels.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub row_labels: Option<bool>,
    /// Input stores features as rows.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub transpose: Option<bool>,
    #[arg(long)]
    pub threads: Option<usize>,
}

impl SelectArgs {
    fn merged(mut self) -> Result<Self> {
        let mut f: SelectArgs = read_config(self.config.as_deref())?;
        merge_fields!(self, f; input, out, method, seed, q, m, estimator, tie_rule, latent, test, known_sigma,
            glm_max_iter, glm_tol, restarts, whitening, ridge, covariance, combiner, double_dip_rule, format,
            header, row_labels, transpose, threads);
        Ok(self)
    }
}

/// Reads a square matrix, with or without a header row.
pub fn load_covariance(path: &Path) -> Result<CovarianceSpec> {
    let mut opts = LoadOptions {
        format: Delimiter::from_path(path),
        ..LoadOptions::default()
    };
    let table = match load_matrix(path, &opts) {
        Err(Error::Parse { row: 1, .. }) => {
            opts.has_header = true;
            load_matrix(path, &opts)?
        }
        other => other?,
    };
    let m = table.matrix.values().clone();
    if m.nrows() != m.ncols() {
        return Err(Error::Data(format!(
            "covariance must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    CovarianceSpec::user_supplied(m)
}

/// Resolved selection settings shared by the CLI and other front ends.
#[derive(Debug, Clone)]
pub struct SelectPlan {
    pub method: Method,
    pub seed: u64,
    pub select: SelectConfig,
    pub mds: MdsConfig,
    pub double_dip_rule: DoubleDipRule,
}

impl SelectPlan {
    pub fn config_json(&self) -> Value {
        json!({
            "method": self.method,
            "seed": self.seed,
            "select": self.select,
            "mds": self.mds,
            "double_dip_rule": self.double_dip_rule,
        })
    }
}

fn build_select_config(a: &SelectArgs, p: usize) -> Result<SelectConfig> {
    let latent = a.latent.unwrap_or(LatentMethod::Kmeans);
    let kind = a.test.unwrap_or(match latent {
        LatentMethod::Kmeans => TestKind::WelchT,
        LatentMethod::Pseudotime => TestKind::PoisGlmWald,
    });
    let mut test = TestConfig::new(kind);
    if let Some(s) = &a.known_sigma {
        test.known_sigma = Some(if s.len() == 1 { vec![s[0]; p] } else { s.clone() });
    }
    if let Some(v) = a.glm_max_iter {
        test.glm_max_iter = v;
    }
    if let Some(v) = a.glm_tol {
        test.glm_tol = v;
    }
    let mut cfg = SelectConfig {
        latent,
        restarts: a.restarts.unwrap_or(crate::cluster::DEFAULT_RESTARTS),
        whitening: a.whitening.unwrap_or_default(),
        ridge: a.ridge.unwrap_or(0.0),
        test,
        q: a.q.unwrap_or(0.1),
        combiner: a.combiner.unwrap_or_default(),
        whitener: None,
    };
    match (&a.covariance, cfg.whitening) {
        (Some(path), WhiteningMode::Known) => {
            let cov = load_covariance(path)?;
            if cov.p() != p {
                return Err(Error::Config(format!(
                    "covariance is {0}x{0} but the data have {p} features",
                    cov.p()
                )));
            }
            cfg = cfg.with_whitener(Whitener::new(&cov)?);
        }
        (Some(_), _) => return Err(Error::Config("--covariance needs --whitening known".into())),
        _ => {}
    }
    cfg.validate(Some(p))?;
    Ok(cfg)
}

/// Runs the chosen method and builds the JSON report (1-based indices).
pub fn run_select(data: &DataMatrix, plan: &SelectPlan, feature_names: Option<&[String]>) -> Result<Value> {
    let rng = RngHandle::new(plan.seed);
    let one_based = |s: &[usize]| s.iter().map(|j| j + 1).collect::<Vec<_>>();
    let (selected, diagnostics) = match plan.method {
        Method::Ds => {
            let r = select_ds(data, &plan.select, split_handle(&rng, 0))?;
            let diag = json!({
                "tau_q": serde_json::to_value(&r).map_err(|e| Error::Data(e.to_string()))?["tau_q"],
                "global_sign": r.global_sign,
                "zero_inner_product": r.zero_inner_product,
                "mirrors": r.mirrors,
            });
            (r.selected, diag)
        }
        Method::Mds => {
            let r = select_mds(data, &plan.select, &plan.mds, rng)?;
            let diag = json!({
                "cutoff_rate": r.cutoff_rate,
                "ell": r.ell,
                "inclusion_simple": r.inclusion_simple,
                "inclusion_weighted": r.inclusion_weighted,
                "per_split_selected": r.per_split_selected.iter().map(|s| one_based(s)).collect::<Vec<_>>(),
                "failures": r.failures,
            });
            (r.selected, diag)
        }
        Method::DoubleDip => {
            let r = double_dip_baseline(data, &plan.select, plan.double_dip_rule, rng)?;
            (r.selected, json!({ "pvalues": r.pvalues }))
        }
    };
    let mut report = json!({
        "method": plan.method,
        "summary": format!("{} features selected", selected.len()),
        "n_selected": selected.len(),
        "selected": one_based(&selected),
        "n": data.n(),
        "p": data.p(),
        "seed": plan.seed,
        "q": plan.select.q,
        "config": plan.config_json(),
        "diagnostics": diagnostics,
    });
    if let Some(names) = feature_names {
        report["selected_names"] = json!(selected.iter().map(|&j| names[j].clone()).collect::<Vec<_>>());
    }
    Ok(report)
}

pub fn cmd_select(args: SelectArgs) -> Result<()> {
    let a = args.merged()?;
    set_threads(a.threads)?;
    let input = required(a.input.clone(), "input")?;
    let opts = LoadOptions {
        format: a.format.unwrap_or_else(|| Delimiter::from_path(&input)),
        has_header: a.header.unwrap_or(true),
        row_labels: a.row_labels.unwrap_or(false),
        transpose: a.transpose.unwrap_or(false),
    };
    let table = load_matrix(&input, &opts)?;
    let select = build_select_config(&a, table.matrix.p())?;
    let mds = MdsConfig {
        m: a.m.unwrap_or(10),
        estimator: a.estimator.unwrap_or_default(),
        tie_rule: a.tie_rule.unwrap_or_default(),
    };
    mds.validate()?;
    let plan = SelectPlan {
        method: a.method.unwrap_or(Method::Mds),
        seed: a.seed.unwrap_or(0),
        select,
        mds,
        double_dip_rule: a.double_dip_rule.unwrap_or_default(),
    };
    let report = run_select(&table.matrix, &plan, table.feature_names.as_deref())?;
    eprintln!("{}", report["summary"].as_str().unwrap_or_default());
    write_json(a.out.as_deref().unwrap_or(Path::new("-")), &report)
}

// ---------------------------------------------------------------- theory

#[derive(Debug, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Mean difference vector eta - xi, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub delta: Option<Vec<f64>>,
    /// Covariance CSV (default identity).
    #[arg(long)]
    pub sigma: Option<PathBuf>,
    /// Size of the first class.
    #[arg(long)]
    pub m: Option<usize>,
    /// Size of the second class.
    #[arg(long)]
    pub n: Option<usize>,
    /// Test level.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Use this mis-clustering error instead of Phi(-Delta/2).
    #[arg(long)]
    pub pe: Option<f64>,
    /// Minority proportions for the split-imbalance bound.
    #[arg(long, value_delimiter = ',')]
    pub w: Option<Vec<f64>>,
    /// Print JSON instead of a table.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub json: Option<bool>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

impl TheoryArgs {
    fn merged(mut self) -> Result<Self> {
        let mut f: TheoryArgs = read_config(self.config.as_deref())?;
        merge_fields!(self, f; delta, sigma, m, n, alpha, pe, w, json, out);
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureTheory {
    pub feature: usize,
    pub delta: f64,
    pub sigma: f64,
    pub exact_power: f64,
    pub asymptotic_power: f64,
    pub loss_lower: f64,
    pub loss_upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryReport {
    pub mahalanobis: f64,
    pub p_e: f64,
    pub m: usize,
    pub n: usize,
    pub alpha: f64,
    pub features: Vec<FeatureTheory>,
    pub imbalance: Vec<(f64, theory::Bound)>,
}

/// Evaluates every closed-form quantity for `spec`.
pub fn theory_report(spec: &theory::TwoClusterSpec, pe: Option<f64>, ws: &[f64]) -> Result<TheoryReport> {
    spec.validate()?;
    let delta_m = spec.mahalanobis()?;
    let p_e = match pe {
        Some(v) if (0.0..=0.5).contains(&v) => v,
        Some(v) => return Err(Error::Config(format!("pe must lie in [0, 0.5], got {v}"))),
        None => theory::misclustering_error(spec)?,
    };
    let delta = spec.delta();
    let features = (0..delta.len())
        .map(|j| {
            let s = spec.sigma[(j, j)].sqrt();
            let (lo, hi) = theory::power_loss_bounds(delta[j], s, spec.m, spec.n, p_e, spec.alpha_level);
            FeatureTheory {
                feature: j + 1,
                delta: delta[j],
                sigma: s,
                exact_power: theory::exact_power_scalar(delta[j], s, spec.m, spec.n, p_e, spec.alpha_level),
                asymptotic_power: theory::asymptotic_power_scalar(delta[j], s, spec.m, spec.n, p_e, spec.alpha_level),
                loss_lower: lo,
                loss_upper: hi,
            }
        })
        .collect();
    let total = spec.m + spec.n;
    let share = spec.m as f64 / total as f64;
    let imbalance = ws
        .iter()
        .map(|&w| Ok((w, theory::split_imbalance_bound(total, share, w)?)))
        .collect::<Result<_>>()?;
    Ok(TheoryReport {
        mahalanobis: delta_m,
        p_e,
        m: spec.m,
        n: spec.n,
        alpha: spec.alpha_level,
        features,
        imbalance,
    })
}

pub fn cmd_theory(args: TheoryArgs) -> Result<()> {
    let a = args.merged()?;
    let delta = required(a.delta.clone(), "delta")?;
    let p = delta.len();
    let sigma = match &a.sigma {
        Some(path) => load_covariance(path)?.matrix,
        None => nalgebra::DMatrix::identity(p, p),
    };
    let spec = theory::TwoClusterSpec {
        xi: vec![0.0; p],
        eta: delta,
        sigma,
        m: required(a.m, "m")?,
        n: required(a.n, "n")?,
        alpha_level: a.alpha.unwrap_or(0.05),
    };
    let ws = a.w.clone().unwrap_or_else(|| vec![0.3, 0.35, 0.4]);
    let report = theory_report(&spec, a.pe, &ws)?;
    let out = a.out.clone().unwrap_or_else(|| PathBuf::from("-"));
    if a.json.unwrap_or(false) {
        return write_json(&out, &serde_json::to_value(&report).map_err(|e| Error::Data(e.to_string()))?);
    }
    let mut w = create_output(&out)?;
    let io = |e| Error::io(&out, e);
    writeln!(w, "mahalanobis\t{}", report.mahalanobis).map_err(io)?;
    writeln!(w, "p_e\t{}", report.p_e).map_err(io)?;
    writeln!(w, "feature\tdelta\tsigma\texact_power\tasymptotic_power\tloss_lower\tloss_upper").map_err(io)?;
    for f in &report.features {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            f.feature, f.delta, f.sigma, f.exact_power, f.asymptotic_power, f.loss_lower, f.loss_upper
        )
        .map_err(io)?;
    }
    writeln!(w, "w\timbalance_bound\tvacuous").map_err(io)?;
    for (wv, b) in &report.imbalance {
        writeln!(w, "{}\t{}\t{}", wv, b.value, b.vacuous).map_err(io)?;
    }
    w.flush().map_err(io)
}

// ---------------------------------------------------------------- bench

#[derive(Debug, Default, Args)]
pub struct BenchArgs {
    /// TOML grid file (template, axes, replicates, seed, methods) or a JSON
    /// manifest from an earlier run.
    #[arg(long)]
    pub config: PathBuf,
    /// Metrics CSV path, `-` (default) for stdout.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Run manifest JSON path (default: output path with `.manifest.json`).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Record wall-clock runtimes in the CSV.
    #[arg(long)]
    pub timing: bool,
}

/// Contents of a bench grid file. An omitted axis takes its single value
/// from the template.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchFile {
    pub template: ModelTemplate,
    #[serde(default)]
    pub deltas: Option<Vec<f64>>,
    #[serde(default)]
    pub rhos: Option<Vec<f64>>,
    #[serde(default)]
    pub sigma_eps: Option<Vec<f64>>,
    #[serde(default = "default_qs")]
    pub qs: Vec<f64>,
    #[serde(default = "one")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    pub methods: Vec<MethodSpec>,
}

fn default_qs() -> Vec<f64> {
    vec![0.1]
}

fn one() -> usize {
    1
}

impl BenchFile {
    /// Reads TOML, or a JSON run manifest written by a previous `bench`.
    pub fn load(path: &Path) -> Result<BenchFile> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad = |msg: String| Error::Config(format!("{}: {msg}", path.display()));
        if path.extension().is_some_and(|e| e == "json") {
            let mut v: Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
            let grid = v.get_mut("grid").map(Value::take).ok_or_else(|| bad("no `grid` key".into()))?;
            serde_json::from_value(grid).map_err(|e| bad(e.to_string()))
        } else {
            toml::from_str(&text).map_err(|e| bad(e.message().to_string()))
        }
    }

    /// Fills omitted axes from the template.
    pub fn resolved(mut self) -> BenchFile {
        let (d, r, s) = match &self.template {
            ModelTemplate::Gaussian(c) => (c.delta, c.rho, c.sigma_eps),
            ModelTemplate::Poisson(c) | ModelTemplate::Trajectory(c) => (c.delta, c.rho, c.sigma_eps),
        };
        self.deltas.get_or_insert_with(|| vec![d]);
        self.rhos.get_or_insert_with(|| vec![r]);
        self.sigma_eps.get_or_insert_with(|| vec![s]);
        self
    }

    pub fn grid(&self) -> ExperimentGrid {
        let r = self.clone().resolved();
        ExperimentGrid {
            template: r.template,
            deltas: r.deltas.unwrap_or_default(),
            rhos: r.rhos.unwrap_or_default(),
            sigma_eps: r.sigma_eps.unwrap_or_default(),
            qs: r.qs,
            replicates: r.replicates,
            seed: r.seed,
        }
    }
}

pub fn cmd_bench(args: BenchArgs) -> Result<()> {
    let mut file = BenchFile::load(&args.config)?.resolved();
    if let Some(r) = args.replicates {
        file.replicates = r;
    }
    if let Some(s) = args.seed {
        file.seed = s;
    }
    let grid = file.grid();
    let opts = RunOptions {
        threads: args.threads,
        timing: args.timing,
    };
    let rows = run_grid(&grid, &file.methods, &opts)?;
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("-"));
    let mut w = create_output(&out)?;
    write_csv(&rows, grid.replicates, &mut w)?;
    w.flush().map_err(|e| Error::io(&out, e))?;
    drop(w);
    let manifest = match (&args.manifest, out.as_os_str() == "-") {
        (Some(m), _) => Some(m.clone()),
        (None, false) => Some(out.with_extension("manifest.json")),
        (None, true) => None,
    };
    if let Some(m) = manifest {
        let value = json!({
            "version": env!("CARGO_PKG_VERSION"),
            "grid": file,
            "timing": args.timing,
        });
        write_json(&m, &value)?;
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Select(a) => cmd_select(a),
        Command::Theory(a) => cmd_theory(a),
        Command::Bench(a) => cmd_bench(a),
    }
}
