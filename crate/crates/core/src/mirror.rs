//! Mirror statistics and single data splitting (DS).

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::assoc::{test_all_features, SignedStatVector, TestConfig, TestKind};
use crate::cluster::{empirical_covariance, first_pc_pseudotime, kmeans2, LatentLabels, Whitener};
use crate::data::{random_split, DataMatrix, SplitPlan};
use crate::error::{Error, Result};
use crate::rng::RngHandle;
use crate::theory::Bound;

/// Shrink factor applied to each candidate `|M_j|` so that the cutoff sits
/// just below the breakpoint and the feature itself stays selected.
pub const CUTOFF_SHRINK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combiner {
    #[default]
    Sum,
    Product,
    Min,
}

impl Combiner {
    pub fn apply(self, u: f64, v: f64) -> f64 {
        match self {
            Combiner::Sum => u + v,
            Combiner::Product => u * v,
            Combiner::Min => u.min(v),
        }
    }
}

/// How each half estimates its latent variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentMethod {
    /// Two-cluster k-means labels.
    #[default]
    Kmeans,
    /// Centered first principal component scores.
    Pseudotime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WhiteningMode {
    #[default]
    None,
    /// A covariance supplied by the caller (see [`SelectConfig::with_whitener`]).
    Known,
    /// Ridge-regularized sample covariance of each half.
    Empirical,
}

/// Everything a DS run needs besides the data and the seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectConfig {
    #[serde(default)]
    pub latent: LatentMethod,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default)]
    pub whitening: WhiteningMode,
    #[serde(default)]
    pub ridge: f64,
    #[serde(default = "default_test")]
    pub test: TestConfig,
    #[serde(default = "default_q")]
    pub q: f64,
    #[serde(default)]
    pub combiner: Combiner,
    #[serde(skip)]
    pub whitener: Option<Arc<Whitener>>,
}

fn default_restarts() -> usize {
    crate::cluster::DEFAULT_RESTARTS
}

fn default_q() -> f64 {
    0.1
}

fn default_test() -> TestConfig {
    TestConfig::new(TestKind::WelchT)
}

impl Default for SelectConfig {
    fn default() -> Self {
        SelectConfig {
            latent: LatentMethod::Kmeans,
            restarts: default_restarts(),
            whitening: WhiteningMode::None,
            ridge: 0.0,
            test: default_test(),
            q: default_q(),
            combiner: Combiner::Sum,
            whitener: None,
        }
    }
}

impl SelectConfig {
    /// Pseudotime with the Poisson GLM Wald test.
    pub fn trajectory() -> Self {
        SelectConfig {
            latent: LatentMethod::Pseudotime,
            test: TestConfig::new(TestKind::PoisGlmWald),
            ..SelectConfig::default()
        }
    }

    pub fn with_whitener(mut self, whitener: Whitener) -> Self {
        self.whitening = WhiteningMode::Known;
        self.whitener = Some(Arc::new(whitener));
        self
    }

    pub fn validate(&self, p: Option<usize>) -> Result<()> {
        check_q(self.q)?;
        if self.restarts == 0 {
            return Err(Error::Config("restarts must be at least 1".into()));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::Config(format!("ridge must be nonnegative, got {}", self.ridge)));
        }
        self.test.validate(p)?;
        match (self.latent, self.test.kind) {
            (LatentMethod::Kmeans, TestKind::PoisGlmWald) => {
                return Err(Error::Config(
                    "pois_glm_wald needs latent = pseudotime".into(),
                ))
            }
            (LatentMethod::Pseudotime, k) if k != TestKind::PoisGlmWald => {
                return Err(Error::Config(format!(
                    "latent = pseudotime needs test pois_glm_wald, got {k:?}"
                )))
            }
            _ => {}
        }
        match self.whitening {
            WhiteningMode::None => {}
            _ if self.latent == LatentMethod::Pseudotime => {
                return Err(Error::Config("whitening applies to k-means only".into()))
            }
            WhiteningMode::Known if self.whitener.is_none() => {
                return Err(Error::Config("whitening = known needs a covariance matrix".into()))
            }
            WhiteningMode::Known | WhiteningMode::Empirical => {}
        }
        Ok(())
    }
}

pub(crate) fn check_q(q: f64) -> Result<()> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Config(format!("q must lie in (0, 1), got {q}")));
    }
    Ok(())
}

/// Mirror statistics together with the label-switch sign.
#[derive(Debug, Clone, PartialEq)]
pub struct Mirrors {
    pub values: Vec<f64>,
    pub global_sign: i8,
    /// Set when `d1'd2` is exactly zero, so no flip was applied.
    pub zero_inner_product: bool,
}

fn sgn(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// `M_j = sgn(d1'd2) sgn(d1_j d2_j) f(|d1_j|, |d2_j|)` with `sgn(0) = +1`.
pub fn mirror_stats(d1: &SignedStatVector, d2: &SignedStatVector, combiner: Combiner) -> Result<Mirrors> {
    if d1.len() != d2.len() {
        return Err(Error::Data(format!(
            "halves have {} and {} statistics",
            d1.len(),
            d2.len()
        )));
    }
    if d1.test_kind != d2.test_kind {
        return Err(Error::Config("halves were tested with different tests".into()));
    }
    let inner: f64 = d1.stats.iter().zip(&d2.stats).map(|(a, b)| a * b).sum();
    let g = sgn(inner);
    let values = d1
        .stats
        .iter()
        .zip(&d2.stats)
        .map(|(&a, &b)| g * sgn(a) * sgn(b) * combiner.apply(a.abs(), b.abs()))
        .collect();
    Ok(Mirrors {
        values,
        global_sign: g as i8,
        zero_inner_product: inner == 0.0,
    })
}

/// Estimated FDP `#{M < -t} / max(#{M > t}, 1)` at threshold `t`.
pub fn estimated_fdp(mirrors: &[f64], t: f64) -> f64 {
    let neg = mirrors.iter().filter(|&&m| m < -t).count();
    let pos = mirrors.iter().filter(|&&m| m > t).count();
    neg as f64 / pos.max(1) as f64
}

/// Smallest threshold with estimated FDP at most `q`.
///
/// Candidates are the nonzero `|M_j|`, each evaluated just below itself at
/// `|M_j| (1 - 1e-12)`. `None` means no candidate qualifies (infinite
/// cutoff, empty selection).
pub fn fdp_cutoff(mirrors: &[f64], q: f64) -> Option<f64> {
    let mut neg: Vec<f64> = mirrors.iter().filter(|&&m| m < 0.0).map(|&m| -m).collect();
    let mut pos: Vec<f64> = mirrors.iter().filter(|&&m| m > 0.0).copied().collect();
    neg.sort_by(f64::total_cmp);
    pos.sort_by(f64::total_cmp);
    let mut cands: Vec<f64> = neg.iter().chain(&pos).copied().collect();
    cands.sort_by(f64::total_cmp);
    cands.dedup();
    for c in cands {
        let t = c * (1.0 - CUTOFF_SHRINK);
        let n_neg = neg.len() - neg.partition_point(|&x| x <= t);
        let n_pos = pos.len() - pos.partition_point(|&x| x <= t);
        if n_neg as f64 / n_pos.max(1) as f64 <= q {
            return Some(t);
        }
    }
    None
}

/// Indices with `M_j > tau` (none when `tau` is infinite).
pub fn select_above(mirrors: &[f64], tau: Option<f64>) -> Vec<usize> {
    match tau {
        None => Vec::new(),
        Some(t) => (0..mirrors.len()).filter(|&j| mirrors[j] > t).collect(),
    }
}

/// Output of a single data-splitting selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MirrorResult {
    pub mirrors: Vec<f64>,
    pub global_sign: i8,
    pub zero_inner_product: bool,
    #[serde(with = "tau_serde")]
    pub tau_q: Option<f64>,
    /// Selected features, 0-based and ascending.
    pub selected: Vec<usize>,
    pub q: f64,
    pub combiner: Combiner,
}

impl MirrorResult {
    pub fn from_stats(d1: &SignedStatVector, d2: &SignedStatVector, q: f64, combiner: Combiner) -> Result<Self> {
        check_q(q)?;
        let m = mirror_stats(d1, d2, combiner)?;
        let tau_q = fdp_cutoff(&m.values, q);
        let selected = select_above(&m.values, tau_q);
        Ok(MirrorResult {
            mirrors: m.values,
            global_sign: m.global_sign,
            zero_inner_product: m.zero_inner_product,
            tau_q,
            selected,
            q,
            combiner,
        })
    }
}

/// Serializes an infinite cutoff as the string `"infinite"`.
mod tau_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Finite(f64),
        Word(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(t) => Repr::Finite(*t),
            None => Repr::Word("infinite".into()),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Finite(t) => Ok(Some(t)),
            Repr::Word(w) if w == "infinite" => Ok(None),
            Repr::Word(w) => Err(serde::de::Error::custom(format!("bad cutoff {w:?}"))),
        }
    }
}

/// Every intermediate of one DS run, for diagnostics and tests.
#[derive(Debug, Clone)]
pub struct DsOutcome {
    pub split: SplitPlan,
    pub latents: [LatentLabels; 2],
    pub stats: [SignedStatVector; 2],
    pub result: MirrorResult,
}

/// Latent estimate for one half: k-means labels (after optional whitening)
/// or first-PC pseudotime.
pub fn estimate_latent(half: &DataMatrix, cfg: &SelectConfig, rng: RngHandle) -> Result<LatentLabels> {
    match cfg.latent {
        LatentMethod::Pseudotime => first_pc_pseudotime(half).map_err(|e| e.at_stage("pseudotime")),
        LatentMethod::Kmeans => {
            let input = match cfg.whitening {
                WhiteningMode::None => None,
                WhiteningMode::Known => {
                    let w = cfg
                        .whitener
                        .as_ref()
                        .ok_or_else(|| Error::Config("whitening = known needs a covariance matrix".into()))?;
                    Some(w.apply(half).map_err(|e| e.at_stage("whitening"))?)
                }
                WhiteningMode::Empirical => {
                    let w = empirical_covariance(half, cfg.ridge)
                        .and_then(|c| Whitener::new(&c))
                        .and_then(|w| w.apply(half))
                        .map_err(|e| e.at_stage("whitening"))?;
                    Some(w)
                }
            };
            kmeans2(input.as_ref().unwrap_or(half), rng, cfg.restarts)
                .map_err(|e| e.at_stage("clustering"))
        }
    }
}

/// Signed statistics of one half against its latent estimate.
pub fn half_stats(half: &DataMatrix, latent: &LatentLabels, cfg: &SelectConfig, half_id: u8) -> Result<SignedStatVector> {
    test_all_features(half, latent, &cfg.test, half_id).map_err(|e| e.at_stage("testing"))
}

/// Runs split, per-half latent estimation, per-half tests and the mirror
/// cutoff, keeping every intermediate.
pub fn select_ds_outcome(data: &DataMatrix, cfg: &SelectConfig, rng: RngHandle) -> Result<DsOutcome> {
    cfg.validate(Some(data.p()))?;
    data.check_selectable()?;
    let split = random_split(data.n(), rng.child(0)).map_err(|e| e.at_stage("split"))?;
    let halves = [data.select_rows(&split.half1), data.select_rows(&split.half2)];
    let latents = [
        estimate_latent(&halves[0], cfg, rng.child(1))?,
        estimate_latent(&halves[1], cfg, rng.child(2))?,
    ];
    let stats = [
        half_stats(&halves[0], &latents[0], cfg, 1)?,
        half_stats(&halves[1], &latents[1], cfg, 2)?,
    ];
    let result = MirrorResult::from_stats(&stats[0], &stats[1], cfg.q, cfg.combiner)
        .map_err(|e| e.at_stage("mirror"))?;
    Ok(DsOutcome {
        split,
        latents,
        stats,
        result,
    })
}

/// Single data-splitting selection.
pub fn select_ds(data: &DataMatrix, cfg: &SelectConfig, rng: RngHandle) -> Result<MirrorResult> {
    select_ds_outcome(data, cfg, rng).map(|o| o.result)
}

/// Lower bound on the probability that `d1'd2` has the sign of the label
/// switch, for independent Gaussian statistics with means `+-delta_j` and
/// common variance `sigma^2`:
/// `1 - 2 exp(-min{S / (4 sigma^2), S^2 / (8 p sigma^4)})`, `S = sum delta_j^2`.
pub fn label_switch_bound(delta_sq_sum: f64, sigma: f64, p: usize) -> Result<Bound> {
    if !(delta_sq_sum >= 0.0) || !(sigma > 0.0) || p == 0 {
        return Err(Error::Config(
            "label_switch_bound needs delta_sq_sum >= 0, sigma > 0, p >= 1".into(),
        ));
    }
    let s2 = sigma * sigma;
    let k = (delta_sq_sum / (4.0 * s2)).min(delta_sq_sum * delta_sq_sum / (8.0 * p as f64 * s2 * s2));
    Ok(Bound::clamped(1.0 - 2.0 * (-k).exp()))
}
