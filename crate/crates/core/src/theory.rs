//! Closed-form quantities for the two-Gaussian model: mis-clustering error,
//! power of the z-test after clustering, and probability bounds.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::dist::{norm_cdf, norm_pdf, norm_ppf};
use crate::error::{Error, Result};

/// A probability bound, clamped to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub value: f64,
    /// The unclamped formula value.
    pub raw: f64,
    /// True when the raw value fell outside `[0, 1]`, so the bound says nothing.
    pub vacuous: bool,
}

impl Bound {
    pub fn clamped(raw: f64) -> Bound {
        Bound {
            value: raw.clamp(0.0, 1.0),
            raw,
            vacuous: !(0.0..=1.0).contains(&raw),
        }
    }
}

/// Two Gaussian classes `N(xi, Sigma)` (m samples) and `N(eta, Sigma)`
/// (n samples) and a test level.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoClusterSpec {
    pub xi: Vec<f64>,
    pub eta: Vec<f64>,
    pub sigma: DMatrix<f64>,
    pub m: usize,
    pub n: usize,
    pub alpha_level: f64,
}

impl TwoClusterSpec {
    /// Identity covariance, `xi = 0`, `eta = delta`.
    pub fn isotropic(delta: Vec<f64>, m: usize, n: usize, alpha_level: f64) -> TwoClusterSpec {
        let p = delta.len();
        TwoClusterSpec {
            xi: vec![0.0; p],
            eta: delta,
            sigma: DMatrix::identity(p, p),
            m,
            n,
            alpha_level,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.xi.len();
        if p == 0 || self.eta.len() != p || self.sigma.shape() != (p, p) {
            return Err(Error::Config(format!(
                "dimension mismatch: xi {}, eta {}, Sigma {}x{}",
                p,
                self.eta.len(),
                self.sigma.nrows(),
                self.sigma.ncols()
            )));
        }
        if self.m == 0 || self.n == 0 {
            return Err(Error::Config("class sizes m and n must be at least 1".into()));
        }
        if !(self.alpha_level > 0.0 && self.alpha_level < 1.0) {
            return Err(Error::Config(format!(
                "alpha_level must lie in (0, 1), got {}",
                self.alpha_level
            )));
        }
        Ok(())
    }

    pub fn delta(&self) -> Vec<f64> {
        self.eta.iter().zip(&self.xi).map(|(e, x)| e - x).collect()
    }

    /// Mahalanobis separation `sqrt(delta' Sigma^{-1} delta)`.
    pub fn mahalanobis(&self) -> Result<f64> {
        self.validate()?;
        let chol = self
            .sigma
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numeric("Sigma is not positive definite".into()))?;
        let d = DVector::from_vec(self.delta());
        let y = chol.l().solve_lower_triangular(&d).expect("nonsingular factor");
        Ok(y.norm())
    }

    fn feature(&self, j: usize) -> Result<(f64, f64)> {
        self.validate()?;
        if j >= self.xi.len() {
            return Err(Error::Config(format!(
                "feature {j} out of range for p = {}",
                self.xi.len()
            )));
        }
        let s = self.sigma[(j, j)];
        if !(s > 0.0) {
            return Err(Error::Numeric(format!("Sigma[{j},{j}] is not positive")));
        }
        Ok((self.eta[j] - self.xi[j], s.sqrt()))
    }
}

/// `Phi(-Delta / 2)`.
pub fn misclustering_error(spec: &TwoClusterSpec) -> Result<f64> {
    Ok(norm_cdf(-spec.mahalanobis()? / 2.0))
}

/// Power of the two-sided level-`alpha` z-test when `k` samples of each
/// class carry the wrong label.
pub fn power_given_swaps(b: f64, r: f64, k: usize, alpha: f64) -> f64 {
    let z = norm_ppf(1.0 - alpha / 2.0);
    let s = b * (1.0 - k as f64 * r);
    norm_cdf(s - z) + norm_cdf(-s - z)
}

fn scaled_signal(delta_j: f64, sigma_j: f64, m: usize, n: usize) -> (f64, f64) {
    let r = (m + n) as f64 / (m as f64 * n as f64);
    (delta_j / (sigma_j * r.sqrt()), r)
}

/// `log binom(m, k) + k log p + (m - k) log(1 - p)`.
fn ln_binom_pmf(m: usize, k: usize, p: f64) -> f64 {
    let lc = ln_gamma(m as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((m - k) as f64 + 1.0);
    let a = if k == 0 { 0.0 } else { k as f64 * p.ln() };
    let b = if k == m { 0.0 } else { (m - k) as f64 * (-p).ln_1p() };
    lc + a + b
}

/// Binomial mixture `sum_k beta(k) Binom(m, k; p_e)` for a single feature.
pub fn exact_power_scalar(delta_j: f64, sigma_j: f64, m: usize, n: usize, p_e: f64, alpha: f64) -> f64 {
    let (b, r) = scaled_signal(delta_j, sigma_j, m, n);
    if p_e <= 0.0 {
        return power_given_swaps(b, r, 0, alpha);
    }
    if p_e >= 1.0 {
        return power_given_swaps(b, r, m, alpha);
    }
    (0..=m)
        .map(|k| ln_binom_pmf(m, k, p_e).exp() * power_given_swaps(b, r, k, alpha))
        .sum::<f64>()
        .clamp(0.0, 1.0)
}

/// `Phi(b(1 - rho) - z) + Phi(-b(1 - rho) - z)` with `rho = (1 + m/n) p_e`.
pub fn asymptotic_power_scalar(delta_j: f64, sigma_j: f64, m: usize, n: usize, p_e: f64, alpha: f64) -> f64 {
    let (b, _) = scaled_signal(delta_j, sigma_j, m, n);
    let z = norm_ppf(1.0 - alpha / 2.0);
    let rho = (1.0 + m as f64 / n as f64) * p_e;
    let s = b * (1.0 - rho);
    norm_cdf(s - z) + norm_cdf(-s - z)
}

/// Leading-order lower and upper bounds on the power loss `beta(0) - beta`:
/// `phi(b - z) rho b` and `phi((1 - rho) b - z) rho b`. The pair is ordered
/// only when `b >= z`; below that the two ends swap.
pub fn power_loss_bounds(delta_j: f64, sigma_j: f64, m: usize, n: usize, p_e: f64, alpha: f64) -> (f64, f64) {
    let (b, _) = scaled_signal(delta_j.abs(), sigma_j, m, n);
    let z = norm_ppf(1.0 - alpha / 2.0);
    let rho = (1.0 + m as f64 / n as f64) * p_e;
    (norm_pdf(b - z) * rho * b, norm_pdf((1.0 - rho) * b - z) * rho * b)
}

/// Exact power for feature `j` at the model's mis-clustering error.
pub fn exact_power(spec: &TwoClusterSpec, j: usize) -> Result<f64> {
    let (d, s) = spec.feature(j)?;
    let pe = misclustering_error(spec)?;
    Ok(exact_power_scalar(d, s, spec.m, spec.n, pe, spec.alpha_level))
}

pub fn asymptotic_power(spec: &TwoClusterSpec, j: usize) -> Result<f64> {
    let (d, s) = spec.feature(j)?;
    let pe = misclustering_error(spec)?;
    Ok(asymptotic_power_scalar(d, s, spec.m, spec.n, pe, spec.alpha_level))
}

/// `Pr(W <= w) <= exp(-(alpha - w)^2 n) + exp(-(1 - alpha - w)^2 n)` for the
/// minority-class proportion `W` of a random half.
pub fn split_imbalance_bound(n: usize, alpha: f64, w: f64) -> Result<Bound> {
    if !(alpha > 0.0 && alpha < 1.0) || !(0.0..=0.5).contains(&w) || n == 0 {
        return Err(Error::Config(
            "split_imbalance_bound needs alpha in (0,1), w in [0,1/2], n >= 1".into(),
        ));
    }
    let nf = n as f64;
    let raw = (-(alpha - w).powi(2) * nf).exp() + (-(1.0 - alpha - w).powi(2) * nf).exp();
    Ok(Bound::clamped(raw))
}
