//! Per-feature signed association statistics between a feature and the
//! estimated latent labels of one half.
//!
//! Every statistic is signed: for discrete labels it is positive when
//! cluster 1 has the larger values, for pseudotime it is positive when the
//! feature increases along the trajectory.

use serde::{Deserialize, Serialize};

use crate::cluster::LatentLabels;
use crate::data::DataMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    ZKnownVar,
    WelchT,
    WilcoxonSigned,
    PoisGlmWald,
}

impl TestKind {
    pub fn needs_discrete(self) -> bool {
        !matches!(self, TestKind::PoisGlmWald)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestConfig {
    pub kind: TestKind,
    /// Per-feature noise standard deviations, only for `z_known_var`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub known_sigma: Option<Vec<f64>>,
    #[serde(default = "default_glm_max_iter")]
    pub glm_max_iter: usize,
    #[serde(default = "default_glm_tol")]
    pub glm_tol: f64,
}

fn default_glm_max_iter() -> usize {
    50
}

fn default_glm_tol() -> f64 {
    1e-8
}

impl TestConfig {
    pub fn new(kind: TestKind) -> TestConfig {
        TestConfig {
            kind,
            known_sigma: None,
            glm_max_iter: default_glm_max_iter(),
            glm_tol: default_glm_tol(),
        }
    }

    pub fn z_known_var(sigma: Vec<f64>) -> TestConfig {
        TestConfig {
            known_sigma: Some(sigma),
            ..TestConfig::new(TestKind::ZKnownVar)
        }
    }

    pub fn validate(&self, p: Option<usize>) -> Result<()> {
        match (&self.known_sigma, self.kind) {
            (None, TestKind::ZKnownVar) => {
                return Err(Error::Config("z_known_var requires known_sigma".into()))
            }
            (Some(_), k) if k != TestKind::ZKnownVar => {
                return Err(Error::Config("known_sigma is only valid for z_known_var".into()))
            }
            (Some(s), _) => {
                if let Some(p) = p {
                    if s.len() != p {
                        return Err(Error::Config(format!(
                            "known_sigma has {} entries, data has {p} features",
                            s.len()
                        )));
                    }
                }
                if s.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                    return Err(Error::Config("known_sigma entries must be positive".into()));
                }
            }
            _ => {}
        }
        if self.glm_max_iter == 0 || !(self.glm_tol > 0.0) {
            return Err(Error::Config("glm_max_iter and glm_tol must be positive".into()));
        }
        Ok(())
    }
}

/// Per-feature outcome recorded next to each statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureFlag {
    Ok,
    /// No variation to test; statistic set to 0.
    Degenerate,
    /// All-zero counts; statistic set to 0.
    AllZero,
    /// Poisson fit did not converge; statistic set to 0.
    Diverged,
}

/// Signed statistics `d^(k)` of one half.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignedStatVector {
    pub stats: Vec<f64>,
    pub test_kind: TestKind,
    pub half_id: u8,
    pub flags: Vec<FeatureFlag>,
    /// Welch degrees of freedom, present for `welch_t` only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub df: Option<Vec<f64>>,
}

impl SignedStatVector {
    pub fn len(&self) -> usize {
        self.stats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stats.is_empty()
    }

    /// Two-sided p-values under each statistic's asymptotic null.
    pub fn two_sided_pvalues(&self) -> Vec<f64> {
        match &self.df {
            Some(df) => self
                .stats
                .iter()
                .zip(df)
                .map(|(&t, &d)| crate::dist::two_sided_t(t, d))
                .collect(),
            None => self.stats.iter().map(|&z| crate::dist::two_sided_normal(z)).collect(),
        }
    }
}

fn discrete(labels: &LatentLabels) -> Result<&[u8]> {
    match labels {
        LatentLabels::Discrete2(v) => Ok(v),
        LatentLabels::Continuous(_) => Err(Error::Config(
            "this test needs discrete cluster labels".into(),
        )),
    }
}

fn check_len(feature: &[f64], labels: &LatentLabels) -> Result<()> {
    if feature.len() != labels.len() {
        return Err(Error::Data(format!(
            "feature has {} values but there are {} labels",
            feature.len(),
            labels.len()
        )));
    }
    Ok(())
}

struct GroupMoments {
    n: [usize; 2],
    mean: [f64; 2],
    /// Unbiased sample variances (0 for singleton groups).
    var: [f64; 2],
}

fn group_moments(feature: &[f64], labels: &[u8]) -> GroupMoments {
    let mut n = [0usize; 2];
    let mut sum = [0.0; 2];
    for (&x, &l) in feature.iter().zip(labels) {
        let g = usize::from(l - 1);
        n[g] += 1;
        sum[g] += x;
    }
    let mean = [sum[0] / n[0] as f64, sum[1] / n[1] as f64];
    let mut ss = [0.0; 2];
    for (&x, &l) in feature.iter().zip(labels) {
        let g = usize::from(l - 1);
        ss[g] += (x - mean[g]) * (x - mean[g]);
    }
    let var = [
        if n[0] > 1 { ss[0] / (n[0] - 1) as f64 } else { 0.0 },
        if n[1] > 1 { ss[1] / (n[1] - 1) as f64 } else { 0.0 },
    ];
    GroupMoments { n, mean, var }
}

fn nonempty(m: &GroupMoments) -> Result<()> {
    if m.n[0] == 0 || m.n[1] == 0 {
        return Err(Error::Data("both clusters must be nonempty".into()));
    }
    Ok(())
}

/// Two-sample z statistic with known noise level `sigma`.
pub fn z_stat_known_var(feature: &[f64], labels: &LatentLabels, sigma: f64) -> Result<f64> {
    check_len(feature, labels)?;
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
    }
    let m = group_moments(feature, discrete(labels)?);
    nonempty(&m)?;
    let se = sigma * (1.0 / m.n[0] as f64 + 1.0 / m.n[1] as f64).sqrt();
    Ok((m.mean[0] - m.mean[1]) / se)
}

/// Welch statistic and its Satterthwaite degrees of freedom.
pub fn welch_t_with_df(feature: &[f64], labels: &LatentLabels) -> Result<(f64, f64)> {
    check_len(feature, labels)?;
    let m = group_moments(feature, discrete(labels)?);
    if m.n[0] < 2 || m.n[1] < 2 {
        return Err(Error::Data(format!(
            "Welch test needs at least 2 samples per cluster, got {} and {}",
            m.n[0], m.n[1]
        )));
    }
    let a = m.var[0] / m.n[0] as f64;
    let b = m.var[1] / m.n[1] as f64;
    let diff = m.mean[0] - m.mean[1];
    if a + b == 0.0 {
        return if diff == 0.0 {
            Ok((0.0, f64::INFINITY))
        } else {
            Err(Error::Degenerate)
        };
    }
    let df = (a + b) * (a + b)
        / (a * a / (m.n[0] - 1) as f64 + b * b / (m.n[1] - 1) as f64);
    Ok((diff / (a + b).sqrt(), df))
}

pub fn welch_t(feature: &[f64], labels: &LatentLabels) -> Result<f64> {
    welch_t_with_df(feature, labels).map(|(t, _)| t)
}

/// Midranks (1-based) of `values`, plus the tie correction `sum(t^3 - t)`.
pub(crate) fn midranks(values: &[f64]) -> (Vec<f64>, f64) {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; n];
    let mut ties = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) share the average of ranks i+1..=j
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        let t = (j - i) as f64;
        ties += t * t * t - t;
        i = j;
    }
    (ranks, ties)
}

/// Standardized Wilcoxon rank-sum statistic of cluster 1, with midranks,
/// tie-corrected variance and a continuity correction toward zero.
pub fn wilcoxon_signed(feature: &[f64], labels: &LatentLabels) -> Result<f64> {
    check_len(feature, labels)?;
    let labels = discrete(labels)?;
    let n = feature.len();
    let n1 = labels.iter().filter(|&&l| l == 1).count();
    let n2 = n - n1;
    if n1 == 0 || n2 == 0 {
        return Err(Error::Data("both clusters must be nonempty".into()));
    }
    let (ranks, ties) = midranks(feature);
    let w1: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l == 1).map(|(r, _)| r).sum();
    let w2: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l == 2).map(|(r, _)| r).sum();
    let (n1f, n2f, nf) = (n1 as f64, n2 as f64, n as f64);
    // (w1 - E w1) written symmetrically so swapping clusters negates exactly
    let centered = 0.5 * ((w1 - n1f * (nf + 1.0) / 2.0) - (w2 - n2f * (nf + 1.0) / 2.0));
    let var = n1f * n2f / 12.0 * ((nf + 1.0) - ties / (nf * (nf - 1.0)));
    if var <= 0.0 {
        return Ok(0.0);
    }
    let corrected = (centered.abs() - 0.5).max(0.0);
    Ok(corrected.copysign(centered) / var.sqrt())
}

/// Result of a two-parameter Poisson log-linear fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoissonFit {
    pub intercept: f64,
    pub slope: f64,
    pub slope_se: f64,
    pub iterations: usize,
}

impl PoissonFit {
    pub fn wald(&self) -> f64 {
        self.slope / self.slope_se
    }
}

fn poisson_deviance(y: &[f64], mu: &[f64]) -> f64 {
    2.0 * y
        .iter()
        .zip(mu)
        .map(|(&yi, &mi)| {
            if yi > 0.0 {
                yi * (yi / mi).ln() - (yi - mi)
            } else {
                mi
            }
        })
        .sum::<f64>()
}

/// Weighted normal equations for the design `[1, t]`.
struct Normal2 {
    s0: f64,
    s1: f64,
    s2: f64,
}

impl Normal2 {
    fn new(w: &[f64], t: &[f64]) -> Normal2 {
        let mut n = Normal2 { s0: 0.0, s1: 0.0, s2: 0.0 };
        for (&wi, &ti) in w.iter().zip(t) {
            n.s0 += wi;
            n.s1 += wi * ti;
            n.s2 += wi * ti * ti;
        }
        n
    }

    fn det(&self) -> f64 {
        self.s0 * self.s2 - self.s1 * self.s1
    }
}

/// Fits `log E[y] = b0 + b1 * t` by iteratively reweighted least squares.
///
/// Starts from `(log(mean(y) + 0.5), 0)`; converged when the relative
/// deviance change `|D - D_old| / (|D| + 0.1)` drops below `tol`. A step that
/// increases the deviance is halved.
pub fn fit_poisson_loglinear(y: &[f64], t: &[f64], max_iter: usize, tol: f64) -> Result<PoissonFit> {
    let n = y.len();
    let mean_y = y.iter().sum::<f64>() / n as f64;
    let mut beta = [(mean_y + 0.5).ln(), 0.0];
    let mut eta: Vec<f64> = vec![beta[0]; n];
    let mut mu: Vec<f64> = eta.iter().map(|e| e.exp()).collect();
    let mut dev = poisson_deviance(y, &mu);
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n];
    for it in 1..=max_iter {
        for i in 0..n {
            w[i] = mu[i];
            z[i] = eta[i] + (y[i] - mu[i]) / mu[i];
        }
        let ne = Normal2::new(&w, t);
        let (mut t0, mut t1) = (0.0, 0.0);
        for i in 0..n {
            t0 += w[i] * z[i];
            t1 += w[i] * t[i] * z[i];
        }
        let det = ne.det();
        if !(det > 0.0) {
            return Err(Error::Numeric("singular Poisson information matrix".into()));
        }
        let target = [(ne.s2 * t0 - ne.s1 * t1) / det, (ne.s0 * t1 - ne.s1 * t0) / det];
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand = [
                beta[0] + step * (target[0] - beta[0]),
                beta[1] + step * (target[1] - beta[1]),
            ];
            for i in 0..n {
                eta[i] = cand[0] + cand[1] * t[i];
                mu[i] = eta[i].exp();
            }
            let new_dev = poisson_deviance(y, &mu);
            if new_dev.is_finite() && new_dev <= dev * (1.0 + 1e-12) + 1e-12 {
                let converged = (new_dev - dev).abs() / (new_dev.abs() + 0.1) < tol;
                beta = cand;
                dev = new_dev;
                accepted = true;
                if converged {
                    let ne = Normal2::new(&mu, t);
                    let det = ne.det();
                    if !(det > 0.0) {
                        return Err(Error::Numeric("singular Poisson information matrix".into()));
                    }
                    return Ok(PoissonFit {
                        intercept: beta[0],
                        slope: beta[1],
                        slope_se: (ne.s0 / det).sqrt(),
                        iterations: it,
                    });
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // restore the last accepted fit before giving up
            for i in 0..n {
                eta[i] = beta[0] + beta[1] * t[i];
                mu[i] = eta[i].exp();
            }
            return Err(Error::Numeric(format!(
                "Poisson IRLS could not reduce the deviance at iteration {it}"
            )));
        }
    }
    Err(Error::Numeric(format!(
        "Poisson IRLS did not converge in {max_iter} iterations"
    )))
}

/// Wald statistic of the slope in a Poisson regression of counts on
/// pseudotime.
pub fn pois_glm_wald(feature: &[f64], labels: &LatentLabels, cfg: &TestConfig) -> Result<f64> {
    glm_feature(feature, labels, cfg).map(|(s, _)| s)
}

fn continuous(labels: &LatentLabels) -> Result<&[f64]> {
    match labels {
        LatentLabels::Continuous(v) => Ok(v),
        LatentLabels::Discrete2(_) => Err(Error::Config(
            "the Poisson GLM test needs continuous pseudotime".into(),
        )),
    }
}

fn glm_feature(feature: &[f64], labels: &LatentLabels, cfg: &TestConfig) -> Result<(f64, FeatureFlag)> {
    check_len(feature, labels)?;
    let t = continuous(labels)?;
    if feature.iter().any(|&y| y < 0.0 || y.fract() != 0.0) {
        return Err(Error::Data("Poisson GLM needs nonnegative integer counts".into()));
    }
    if feature.iter().all(|&y| y == 0.0) {
        return Ok((0.0, FeatureFlag::AllZero));
    }
    if feature.iter().all(|&y| y == feature[0]) {
        return Ok((0.0, FeatureFlag::Degenerate));
    }
    match fit_poisson_loglinear(feature, t, cfg.glm_max_iter, cfg.glm_tol) {
        Ok(fit) => Ok((fit.wald(), FeatureFlag::Ok)),
        Err(Error::Numeric(_)) => Ok((0.0, FeatureFlag::Diverged)),
        Err(e) => Err(e),
    }
}

fn check_labels(labels: &LatentLabels, kind: TestKind) -> Result<()> {
    match labels {
        LatentLabels::Discrete2(_) if !kind.needs_discrete() => Err(Error::Config(
            "the Poisson GLM test needs continuous pseudotime".into(),
        )),
        LatentLabels::Continuous(t) => {
            if kind.needs_discrete() {
                return Err(Error::Config(format!(
                    "{kind:?} needs discrete cluster labels"
                )));
            }
            let ss: f64 = t.iter().map(|x| x * x).sum();
            if !(ss > 0.0) {
                return Err(Error::Degenerate);
            }
            Ok(())
        }
        LatentLabels::Discrete2(v) => {
            let n1 = v.iter().filter(|&&l| l == 1).count();
            let need = if kind == TestKind::WelchT { 2 } else { 1 };
            if n1 < need || v.len() - n1 < need {
                return Err(Error::Data(format!(
                    "clusters of sizes {n1} and {} are too small for {kind:?}",
                    v.len() - n1
                )));
            }
            Ok(())
        }
    }
}

/// Applies the configured test to every column of `data`.
///
/// Features with nothing to test (no variation, all zeros, a Poisson fit
/// that does not converge, or zero within-group variance) get statistic 0
/// and a flag instead of failing the whole run.
pub fn test_all_features(
    data: &DataMatrix,
    labels: &LatentLabels,
    cfg: &TestConfig,
    half_id: u8,
) -> Result<SignedStatVector> {
    cfg.validate(Some(data.p()))?;
    if labels.len() != data.n() {
        return Err(Error::Data(format!(
            "{} labels for {} samples",
            labels.len(),
            data.n()
        )));
    }
    check_labels(labels, cfg.kind)?;
    let p = data.p();
    let mut stats = Vec::with_capacity(p);
    let mut flags = Vec::with_capacity(p);
    let mut dfs = (cfg.kind == TestKind::WelchT).then(|| Vec::with_capacity(p));
    for j in 0..p {
        let col = data.column(j);
        let (s, flag, df) = match cfg.kind {
            TestKind::ZKnownVar => {
                let sigma = cfg.known_sigma.as_ref().expect("validated")[j];
                (z_stat_known_var(col, labels, sigma)?, FeatureFlag::Ok, None)
            }
            TestKind::WelchT => match welch_t_with_df(col, labels) {
                Ok((t, df)) if df.is_infinite() => (t, FeatureFlag::Degenerate, Some(df)),
                Ok((t, df)) => (t, FeatureFlag::Ok, Some(df)),
                Err(Error::Degenerate) => (0.0, FeatureFlag::Degenerate, Some(f64::INFINITY)),
                Err(e) => return Err(e),
            },
            TestKind::WilcoxonSigned => {
                let s = wilcoxon_signed(col, labels)?;
                let flag = if col.iter().all(|&x| x == col[0]) {
                    FeatureFlag::Degenerate
                } else {
                    FeatureFlag::Ok
                };
                (s, flag, None)
            }
            TestKind::PoisGlmWald => {
                let (s, flag) = glm_feature(col, labels, cfg)?;
                (s, flag, None)
            }
        };
        stats.push(s);
        flags.push(flag);
        if let (Some(v), Some(d)) = (dfs.as_mut(), df) {
            v.push(d);
        }
    }
    Ok(SignedStatVector {
        stats,
        test_kind: cfg.kind,
        half_id,
        flags,
        df: dfs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(v: &[u8]) -> LatentLabels {
        LatentLabels::discrete(v.to_vec()).unwrap()
    }

    #[test]
    fn z_by_hand() {
        let l = labels(&[1, 1, 2, 2]);
        assert!((z_stat_known_var(&[1., 1., 0., 0.], &l, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(z_stat_known_var(&[3., 1., 2., 2.], &l, 1.0).unwrap(), 0.0);
        assert!(z_stat_known_var(&[1., 1., 0., 0.], &l, 0.0).is_err());
    }

    #[test]
    fn welch_by_hand() {
        let l = labels(&[1, 1, 2, 2]);
        assert_eq!(welch_t(&[0., 2., 0., 2.], &l).unwrap(), 0.0);
        let t = welch_t(&[10., 12., 0., 2.], &l).unwrap();
        assert!((t - 10.0 / 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(welch_t(&[1., 1., 1., 1.], &l).unwrap(), 0.0);
        assert!(matches!(welch_t(&[1., 1., 0., 0.], &l), Err(Error::Degenerate)));
        assert!(welch_t(&[1., 2., 3.], &labels(&[1, 2, 2])).is_err());
    }

    #[test]
    fn wilcoxon_identical_groups() {
        assert_eq!(wilcoxon_signed(&[1., 2., 1., 2.], &labels(&[1, 1, 2, 2])).unwrap(), 0.0);
    }

    #[test]
    fn midranks_with_ties() {
        let (r, ties) = midranks(&[3., 1., 3., 2., 3.]);
        assert_eq!(r, vec![4., 1., 4., 2., 4.]);
        assert_eq!(ties, 24.0);
    }

    #[test]
    fn glm_constant_and_zero() {
        let t = LatentLabels::continuous(vec![-1., 0., 1., 2.]).unwrap();
        let cfg = TestConfig::new(TestKind::PoisGlmWald);
        assert_eq!(pois_glm_wald(&[4., 4., 4., 4.], &t, &cfg).unwrap(), 0.0);
        assert_eq!(pois_glm_wald(&[0., 0., 0., 0.], &t, &cfg).unwrap(), 0.0);
        assert!(pois_glm_wald(&[1., 0.5, 0., 0.], &t, &cfg).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TestConfig::new(TestKind::ZKnownVar).validate(None).is_err());
        let mut c = TestConfig::new(TestKind::WelchT);
        c.known_sigma = Some(vec![1.0]);
        assert!(c.validate(None).is_err());
        assert!(TestConfig::z_known_var(vec![1.0, 2.0]).validate(Some(3)).is_err());
        assert!(TestConfig::z_known_var(vec![1.0, -2.0]).validate(Some(2)).is_err());
    }

    #[test]
    fn wrong_label_kind() {
        let d = DataMatrix::from_row_major(4, 1, &[1., 2., 3., 4.]).unwrap();
        let t = LatentLabels::continuous(vec![-1., 0., 1., 2.]).unwrap();
        assert!(test_all_features(&d, &t, &TestConfig::new(TestKind::WelchT), 1).is_err());
        let l = labels(&[1, 1, 2, 2]);
        assert!(test_all_features(&d, &l, &TestConfig::new(TestKind::PoisGlmWald), 1).is_err());
    }

    #[test]
    fn degenerate_features_flagged() {
        // column 1 separates perfectly with zero variance, column 2 constant
        let d = DataMatrix::from_row_major(4, 3, &[1., 5., 0.3, 1., 5., 0.1, 0., 5., 0.2, 0., 5., 0.9])
            .unwrap();
        let v = test_all_features(&d, &labels(&[1, 1, 2, 2]), &TestConfig::new(TestKind::WelchT), 1)
            .unwrap();
        assert_eq!(v.stats[0], 0.0);
        assert_eq!(v.flags[0], FeatureFlag::Degenerate);
        assert_eq!(v.flags[1], FeatureFlag::Degenerate);
        assert_eq!(v.flags[2], FeatureFlag::Ok);
    }
}
