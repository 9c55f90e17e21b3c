//! Multiple data splitting (MDS): repeated DS runs aggregated through
//! inclusion rates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::mirror::{check_q, select_ds, SelectConfig};
use crate::rng::RngHandle;

/// Slack on the prefix-sum comparison against `q`, absorbing rounding in
/// sums of rationals like `k / T`.
pub const PREFIX_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Mean over splits of `1(j in S_k) / max(|S_k|, 1)`.
    Simple,
    /// `sum_k 1(j in S_k) / max(sum_k |S_k|, 1)`.
    #[default]
    Weighted,
}

/// How features tied with the `l`-th smallest rate are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieRule {
    /// As `Strict`, except that the block tied at the largest rate is never
    /// dropped. Weighted rates are counts over a common total, so features
    /// chosen in every split tie exactly; when `l` reaches that block the
    /// strict rule would select nothing.
    #[default]
    KeepTop,
    /// Keep `{j : rate_j > rate_(l)}`; every feature tied with the `l`-th
    /// rate is dropped.
    Strict,
    /// Drop exactly the `l` smallest rates in (rate, index) order and keep
    /// the remaining nonzero ones. Depends on column order within a tie.
    Positional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdsConfig {
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default)]
    pub estimator: Estimator,
    #[serde(default)]
    pub tie_rule: TieRule,
}

fn default_m() -> usize {
    10
}

impl Default for MdsConfig {
    fn default() -> Self {
        MdsConfig {
            m: default_m(),
            estimator: Estimator::Weighted,
            tie_rule: TieRule::KeepTop,
        }
    }
}

impl MdsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        Ok(())
    }
}

fn check_indices(selections: &[Vec<usize>], p: usize) -> Result<()> {
    if selections.is_empty() {
        return Err(Error::Config("need at least one selection set".into()));
    }
    if let Some(&j) = selections.iter().flatten().find(|&&j| j >= p) {
        return Err(Error::Data(format!("selected index {j} out of range for p = {p}")));
    }
    Ok(())
}

pub fn inclusion_simple(selections: &[Vec<usize>], p: usize) -> Result<Vec<f64>> {
    check_indices(selections, p)?;
    let mut rates = vec![0.0; p];
    for s in selections {
        let w = 1.0 / s.len().max(1) as f64;
        for &j in s {
            rates[j] += w;
        }
    }
    let m = selections.len() as f64;
    rates.iter_mut().for_each(|r| *r /= m);
    Ok(rates)
}

pub fn inclusion_weighted(selections: &[Vec<usize>], p: usize) -> Result<Vec<f64>> {
    check_indices(selections, p)?;
    let mut counts = vec![0usize; p];
    for s in selections {
        for &j in s {
            counts[j] += 1;
        }
    }
    let total = selections.iter().map(Vec::len).sum::<usize>().max(1) as f64;
    Ok(counts.into_iter().map(|c| c as f64 / total).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdsCutoff {
    /// Number of smallest rates whose sum stays within `q`.
    pub ell: usize,
    /// `rate_(l)`, or 0 when `l = 0`.
    pub cutoff_rate: f64,
    pub selected: Vec<usize>,
}

/// Sorts the rates ascending, finds the largest `l` whose prefix sum is at
/// most `q`, and keeps the features above the cutoff; `tie_rule` settles
/// features tied with the `l`-th rate. When even the smallest rate exceeds
/// `q` (`l = 0`) every nonzero rate is kept.
pub fn mds_cutoff(rates: &[f64], q: f64, tie_rule: TieRule) -> Result<MdsCutoff> {
    check_q(q)?;
    if rates.iter().any(|&r| !(r >= 0.0 && r.is_finite())) {
        return Err(Error::Data("inclusion rates must be finite and nonnegative".into()));
    }
    let mut order: Vec<usize> = (0..rates.len()).collect();
    order.sort_by(|&a, &b| rates[a].total_cmp(&rates[b]).then(a.cmp(&b)));
    let mut ell = 0;
    let mut sum = 0.0;
    for (i, &j) in order.iter().enumerate() {
        sum += rates[j];
        if sum <= q + PREFIX_TOL {
            ell = i + 1;
        } else {
            break;
        }
    }
    let cutoff_rate = if ell == 0 { 0.0 } else { rates[order[ell - 1]] };
    let mut selected: Vec<usize> = match tie_rule {
        TieRule::Strict => (0..rates.len()).filter(|&j| rates[j] > cutoff_rate).collect(),
        TieRule::KeepTop => {
            let top = order.last().map_or(0.0, |&j| rates[j]);
            if top > 0.0 && cutoff_rate == top {
                (0..rates.len()).filter(|&j| rates[j] == top).collect()
            } else {
                (0..rates.len()).filter(|&j| rates[j] > cutoff_rate).collect()
            }
        }
        TieRule::Positional => order[ell..].iter().copied().filter(|&j| rates[j] > 0.0).collect(),
    };
    selected.sort_unstable();
    Ok(MdsCutoff {
        ell,
        cutoff_rate,
        selected,
    })
}

/// A DS replicate that failed and contributed an empty selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub split: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdsResult {
    pub per_split_selected: Vec<Vec<usize>>,
    pub inclusion_simple: Vec<f64>,
    pub inclusion_weighted: Vec<f64>,
    pub estimator: Estimator,
    pub tie_rule: TieRule,
    pub cutoff_rate: f64,
    pub ell: usize,
    /// Selected features, 0-based and ascending.
    pub selected: Vec<usize>,
    pub m: usize,
    pub q: f64,
    pub failures: Vec<ReplicateFailure>,
}

impl MdsResult {
    pub fn rates(&self) -> &[f64] {
        match self.estimator {
            Estimator::Simple => &self.inclusion_simple,
            Estimator::Weighted => &self.inclusion_weighted,
        }
    }

    /// Aggregates given per-split selections.
    pub fn aggregate(
        per_split_selected: Vec<Vec<usize>>,
        p: usize,
        q: f64,
        mds: &MdsConfig,
        failures: Vec<ReplicateFailure>,
    ) -> Result<MdsResult> {
        let inclusion_simple = inclusion_simple(&per_split_selected, p)?;
        let inclusion_weighted = inclusion_weighted(&per_split_selected, p)?;
        let rates = match mds.estimator {
            Estimator::Simple => &inclusion_simple,
            Estimator::Weighted => &inclusion_weighted,
        };
        let cut = mds_cutoff(rates, q, mds.tie_rule)?;
        Ok(MdsResult {
            m: per_split_selected.len(),
            per_split_selected,
            inclusion_simple,
            inclusion_weighted,
            estimator: mds.estimator,
            tie_rule: mds.tie_rule,
            cutoff_rate: cut.cutoff_rate,
            ell: cut.ell,
            selected: cut.selected,
            q,
            failures,
        })
    }
}

/// Stream of MDS split `k`. Front ends run single DS on `split_handle(rng, 0)`
/// so that DS and MDS with one split agree for the same seed.
pub fn split_handle(rng: &RngHandle, k: usize) -> RngHandle {
    rng.child(k as u64)
}

/// Runs `m` DS selections on child streams `0..m` of `rng` and aggregates
/// them. Replicates run on the current rayon pool; the result does not
/// depend on scheduling.
///
/// A replicate that fails at run time (for example a degenerate clustering)
/// counts as an empty selection and is listed in `failures`; the call fails
/// only when every replicate does.
pub fn select_mds(data: &DataMatrix, cfg: &SelectConfig, mds: &MdsConfig, rng: RngHandle) -> Result<MdsResult> {
    cfg.validate(Some(data.p()))?;
    mds.validate()?;
    data.check_selectable()?;
    let runs: Vec<Result<Vec<usize>>> = (0..mds.m)
        .into_par_iter()
        .map(|k| select_ds(data, cfg, split_handle(&rng, k)).map(|r| r.selected))
        .collect();
    let mut selections = Vec::with_capacity(mds.m);
    let mut failures = Vec::new();
    let mut first_err = None;
    for (k, run) in runs.into_iter().enumerate() {
        match run {
            Ok(s) => selections.push(s),
            Err(e) => {
                failures.push(ReplicateFailure {
                    split: k,
                    error: e.to_string(),
                });
                first_err.get_or_insert(e);
                selections.push(Vec::new());
            }
        }
    }
    if failures.len() == mds.m {
        return Err(first_err.expect("at least one failure"));
    }
    MdsResult::aggregate(selections, data.p(), cfg.q, mds, failures)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simple_examples() {
        let r = inclusion_simple(&[vec![0, 1], vec![0]], 3).unwrap();
        assert_eq!(r, vec![0.75, 0.25, 0.0]);
        assert_eq!(inclusion_simple(&[vec![], vec![]], 2).unwrap(), vec![0.0, 0.0]);
        assert_eq!(inclusion_simple(&[vec![1, 2]], 3).unwrap(), vec![0.0, 0.5, 0.5]);
    }

    #[test]
    fn weighted_examples() {
        let r = inclusion_weighted(&[vec![0, 1], vec![0]], 3).unwrap();
        assert_eq!(r, vec![2.0 / 3.0, 1.0 / 3.0, 0.0]);
        assert_eq!(inclusion_weighted(&[vec![], vec![]], 2).unwrap(), vec![0.0, 0.0]);
        let r = inclusion_weighted(&[vec![4], vec![4], vec![4]], 6).unwrap();
        assert_eq!(r, vec![0., 0., 0., 0., 1., 0.]);
        assert!(inclusion_weighted(&[vec![7]], 3).is_err());
    }

    #[test]
    fn cutoff_examples() {
        for rule in [TieRule::KeepTop, TieRule::Strict, TieRule::Positional] {
            let c = mds_cutoff(&[0.0, 0.0, 0.05, 0.95], 0.1, rule).unwrap();
            assert_eq!((c.ell, c.cutoff_rate, c.selected), (3, 0.05, vec![3]));
            let c = mds_cutoff(&[0.0; 4], 0.1, rule).unwrap();
            assert_eq!((c.ell, c.selected.len()), (4, 0));
            // l = 0: the smallest rate already exceeds q
            let c = mds_cutoff(&[0.5, 0.5], 0.1, rule).unwrap();
            assert_eq!((c.ell, c.cutoff_rate, c.selected), (0, 0.0, vec![0, 1]));
        }
    }

    #[test]
    fn tie_rules_differ_only_on_straddling_ties() {
        // sorted: 0, 0.04, 0.04, 0.04, 0.88; prefix 0.08 fits, 0.12 does not
        let rates = [0.04, 0.0, 0.04, 0.88, 0.04];
        let s = mds_cutoff(&rates, 0.1, TieRule::Strict).unwrap();
        assert_eq!((s.ell, s.selected), (3, vec![3]));
        let p = mds_cutoff(&rates, 0.1, TieRule::Positional).unwrap();
        assert_eq!((p.ell, p.selected), (3, vec![3, 4]));
        let k = mds_cutoff(&rates, 0.1, TieRule::KeepTop).unwrap();
        assert_eq!((k.ell, k.selected), (3, vec![3]));
    }

    #[test]
    fn keep_top_survives_a_tied_top_block() {
        // 100 features chosen in all 10 splits, 5 chosen once
        let mut rates = vec![10.0 / 1005.0; 100];
        rates.extend([1.0 / 1005.0; 5]);
        let s = mds_cutoff(&rates, 0.1, TieRule::Strict).unwrap();
        assert_eq!(s.ell, 14);
        assert!(s.selected.is_empty());
        let k = mds_cutoff(&rates, 0.1, TieRule::KeepTop).unwrap();
        assert_eq!(k.selected, (0..100).collect::<Vec<_>>());
        // positional drops the first nine of the block by index
        let p = mds_cutoff(&rates, 0.1, TieRule::Positional).unwrap();
        assert_eq!(p.selected, (9..100).collect::<Vec<_>>());
    }

    #[test]
    fn bad_rates_rejected() {
        assert!(mds_cutoff(&[-0.1], 0.1, TieRule::Strict).is_err());
        assert!(mds_cutoff(&[0.1], 0.0, TieRule::Strict).is_err());
    }
}
