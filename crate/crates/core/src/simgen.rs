//! Synthetic data with known relevant features: Gaussian mean shift,
//! Poisson log-linear counts with Gaussian-copula dependence, and the linear
//! trajectory variant of the Poisson model.
//!
//! The latent variable is drawn from child stream 0 of the handle and row `i`
//! from child stream `i + 1`, so rows can be generated in any order.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{DiscreteCDF, Poisson};

use crate::data::{DataMatrix, GroundTruth};
use crate::dist::norm_cdf;
use crate::error::{Error, Result};
use crate::rng::RngHandle;

/// Largest Poisson rate accepted by the count generators.
pub const MAX_LAMBDA: f64 = 1e12;

/// How the per-sample noise `eps_i ~ N(0, sigma_eps^2 I)` enters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// An independent draw per sample and feature.
    #[default]
    PerFeature,
    /// One draw per sample, added to every feature of that sample.
    SharedShift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianSimCfg {
    pub n: usize,
    pub p: usize,
    pub p1: usize,
    #[serde(default)]
    pub delta: f64,
    #[serde(default)]
    pub rho: f64,
    #[serde(default)]
    pub sigma_eps: f64,
    #[serde(default = "half")]
    pub class_prob: f64,
    #[serde(default)]
    pub noise: NoiseMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoissonSimCfg {
    pub n: usize,
    pub p: usize,
    pub p1: usize,
    #[serde(default)]
    pub delta: f64,
    #[serde(default)]
    pub rho: f64,
    #[serde(default)]
    pub sigma_eps: f64,
    #[serde(default = "ln3")]
    pub beta0: f64,
    /// Bernoulli rate of the discrete latent; unused for trajectories.
    #[serde(default = "half")]
    pub class_prob: f64,
    #[serde(default)]
    pub noise: NoiseMode,
}

/// The trajectory model shares the Poisson parameters.
pub type TrajectorySimCfg = PoissonSimCfg;

fn half() -> f64 {
    0.5
}

fn ln3() -> f64 {
    3f64.ln()
}

impl GaussianSimCfg {
    pub fn new(n: usize, p: usize, p1: usize, delta: f64) -> Self {
        GaussianSimCfg {
            n,
            p,
            p1,
            delta,
            rho: 0.0,
            sigma_eps: 0.0,
            class_prob: 0.5,
            noise: NoiseMode::PerFeature,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_common(self.n, self.p, self.p1, self.delta, self.rho, self.sigma_eps)?;
        check_prob(self.class_prob)
    }
}

impl PoissonSimCfg {
    pub fn new(n: usize, p: usize, p1: usize, delta: f64) -> Self {
        PoissonSimCfg {
            n,
            p,
            p1,
            delta,
            rho: 0.0,
            sigma_eps: 0.0,
            beta0: ln3(),
            class_prob: 0.5,
            noise: NoiseMode::PerFeature,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_common(self.n, self.p, self.p1, self.delta, self.rho, self.sigma_eps)?;
        check_prob(self.class_prob)?;
        if !self.beta0.is_finite() {
            return Err(Error::Config("beta0 must be finite".into()));
        }
        Ok(())
    }
}

fn check_common(n: usize, p: usize, p1: usize, delta: f64, rho: f64, sigma_eps: f64) -> Result<()> {
    if n == 0 || p == 0 {
        return Err(Error::Config("n and p must be at least 1".into()));
    }
    if p1 > p {
        return Err(Error::Config(format!("p1 = {p1} exceeds p = {p}")));
    }
    if !delta.is_finite() {
        return Err(Error::Config("delta must be finite".into()));
    }
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::Config(format!("rho must lie in [0, 1), got {rho}")));
    }
    if !(sigma_eps >= 0.0 && sigma_eps.is_finite()) {
        return Err(Error::Config(format!("sigma_eps must be nonnegative, got {sigma_eps}")));
    }
    Ok(())
}

fn check_prob(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("class_prob must lie in [0, 1], got {p}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentKind {
    /// `L_i ~ Bernoulli`, coded 0/1.
    Bernoulli,
    /// `L = (I - 11'/n) Z` with `Z_i ~ N(0, 1)`.
    Trajectory,
}

/// Simulated data with its ground truth and true latent values.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub data: DataMatrix,
    pub truth: GroundTruth,
    pub latent: Vec<f64>,
}

impl SimOutput {
    /// JSON sidecar with 1-based relevant indices and the latent values.
    pub fn sidecar(&self, model: &str, config: serde_json::Value, seed: u64) -> serde_json::Value {
        serde_json::json!({
            "model": model,
            "seed": seed,
            "config": config,
            "n": self.data.n(),
            "p": self.data.p(),
            "relevant": self.truth.relevant.iter().map(|j| j + 1).collect::<Vec<_>>(),
            "latent": self.latent,
        })
    }
}

/// Fills `z` with a unit-variance AR(1) sequence, `z_j = rho z_{j-1} + sqrt(1 - rho^2) w_j`.
fn ar1_row<R: Rng>(rng: &mut R, rho: f64, z: &mut [f64]) {
    let scale = (1.0 - rho * rho).sqrt();
    let mut prev = 0.0;
    for (j, zj) in z.iter_mut().enumerate() {
        let w: f64 = rng.sample(StandardNormal);
        prev = if j == 0 { w } else { rho * prev + scale * w };
        *zj = prev;
    }
}

fn noise_row<R: Rng>(rng: &mut R, mode: NoiseMode, sigma: f64, eps: &mut [f64]) {
    if sigma == 0.0 {
        eps.fill(0.0);
        return;
    }
    match mode {
        NoiseMode::PerFeature => {
            for e in eps.iter_mut() {
                *e = sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
        NoiseMode::SharedShift => eps.fill(sigma * rng.sample::<f64, _>(StandardNormal)),
    }
}

fn bernoulli_latent(n: usize, prob: f64, rng: RngHandle) -> Vec<f64> {
    let mut r = rng.rng();
    (0..n).map(|_| if r.random_bool(prob) { 1.0 } else { 0.0 }).collect()
}

fn trajectory_latent(n: usize, rng: RngHandle) -> Vec<f64> {
    let mut r = rng.rng();
    let z: Vec<f64> = (0..n).map(|_| r.sample(StandardNormal)).collect();
    let mean = z.iter().sum::<f64>() / n as f64;
    z.into_iter().map(|v| v - mean).collect()
}

/// `X_i = mu L_i + eps_i + z_i` with `mu_j = delta 1(j < p1)`, `z_i ~ N(0, AR1(rho))`.
pub fn gen_gaussian(cfg: &GaussianSimCfg, rng: RngHandle) -> Result<SimOutput> {
    cfg.validate()?;
    let (n, p) = (cfg.n, cfg.p);
    let latent = bernoulli_latent(n, cfg.class_prob, rng.child(0));
    let mut values = DMatrix::zeros(n, p);
    let mut z = vec![0.0; p];
    let mut eps = vec![0.0; p];
    for i in 0..n {
        let mut r = rng.child(i as u64 + 1).rng();
        noise_row(&mut r, cfg.noise, cfg.sigma_eps, &mut eps);
        ar1_row(&mut r, cfg.rho, &mut z);
        for j in 0..p {
            let mu = if j < cfg.p1 { cfg.delta * latent[i] } else { 0.0 };
            values[(i, j)] = mu + eps[j] + z[j];
        }
    }
    Ok(SimOutput {
        data: DataMatrix::new(values)?,
        truth: GroundTruth::first_relevant(p, cfg.p1)?,
        latent,
    })
}

/// Rows of uniforms `u_j = Phi(z_j)` with `z ~ N(0, AR1(rho))`.
pub fn gaussian_copula_uniforms(n: usize, p: usize, rho: f64, rng: RngHandle) -> Result<DMatrix<f64>> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::Config(format!("rho must lie in [0, 1), got {rho}")));
    }
    let mut u = DMatrix::zeros(n, p);
    let mut z = vec![0.0; p];
    for i in 0..n {
        let mut r = rng.child(i as u64 + 1).rng();
        ar1_row(&mut r, rho, &mut z);
        for j in 0..p {
            u[(i, j)] = norm_cdf(z[j]);
        }
    }
    Ok(u)
}

/// Smallest `k` with `P(Pois(lambda) <= k) >= u`.
///
/// Sums the pmf upward from 0; for `lambda > 500`, where `exp(-lambda)`
/// loses too much range, it defers to a CDF bisection.
pub fn poisson_quantile(u: f64, lambda: f64) -> Result<u64> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Numeric(format!("Poisson rate must be positive, got {lambda}")));
    }
    if lambda > MAX_LAMBDA {
        return Err(Error::Numeric(format!("signal too large: Poisson rate {lambda:e}")));
    }
    if u.is_nan() || u > 1.0 {
        return Err(Error::Data(format!("quantile level must lie in (0, 1), got {u}")));
    }
    if u <= 0.0 {
        return Ok(0);
    }
    if lambda > 500.0 {
        let dist = Poisson::new(lambda).map_err(|e| Error::Numeric(e.to_string()))?;
        return Ok(dist.inverse_cdf(u.min(1.0 - f64::EPSILON)));
    }
    let mut k = 0u64;
    let mut pmf = (-lambda).exp();
    let mut cdf = pmf;
    while cdf < u {
        k += 1;
        pmf *= lambda / k as f64;
        cdf += pmf;
        // u within rounding of 1: the remaining mass no longer moves the sum
        if k as f64 > lambda && pmf <= cdf * f64::EPSILON {
            break;
        }
    }
    Ok(k)
}

/// Counts `X_ij = F^{-1}_{Pois(Lambda_ij)}(u_ij)` with
/// `log Lambda_ij = beta0 + L_i beta_1j + eps_ij`, `beta_1j = delta 1(j < p1)`,
/// and copula uniforms `u_i` from an AR(1) Gaussian.
pub fn gen_poisson(cfg: &PoissonSimCfg, rng: RngHandle, latent_kind: LatentKind) -> Result<SimOutput> {
    cfg.validate()?;
    let (n, p) = (cfg.n, cfg.p);
    let latent = match latent_kind {
        LatentKind::Bernoulli => bernoulli_latent(n, cfg.class_prob, rng.child(0)),
        LatentKind::Trajectory => trajectory_latent(n, rng.child(0)),
    };
    let mut values = DMatrix::zeros(n, p);
    let mut z = vec![0.0; p];
    let mut eps = vec![0.0; p];
    for i in 0..n {
        let mut r = rng.child(i as u64 + 1).rng();
        ar1_row(&mut r, cfg.rho, &mut z);
        noise_row(&mut r, cfg.noise, cfg.sigma_eps, &mut eps);
        for j in 0..p {
            let b1 = if j < cfg.p1 { cfg.delta } else { 0.0 };
            let lambda = (cfg.beta0 + latent[i] * b1 + eps[j]).exp();
            values[(i, j)] = poisson_quantile(norm_cdf(z[j]), lambda)? as f64;
        }
    }
    Ok(SimOutput {
        data: DataMatrix::new(values)?,
        truth: GroundTruth::first_relevant(p, cfg.p1)?,
        latent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_examples() {
        assert_eq!(poisson_quantile(1e-300, 1.0).unwrap(), 0);
        assert_eq!(poisson_quantile(0.5, 1.0).unwrap(), 1);
        // CDF(0) = e^-1 exactly at the boundary stays at 0
        assert_eq!(poisson_quantile((-1f64).exp(), 1.0).unwrap(), 0);
        assert!(poisson_quantile(1.0, 3.0).unwrap() < 60);
        assert!(poisson_quantile(0.5, 0.0).is_err());
        assert!(poisson_quantile(0.5, 2e12).is_err());
    }

    #[test]
    fn quantile_large_rate_near_median() {
        let k = poisson_quantile(0.5, 10_000.0).unwrap();
        assert!((9_990..=10_010).contains(&k), "{k}");
    }

    #[test]
    fn validation() {
        let mut c = GaussianSimCfg::new(10, 5, 6, 1.0);
        assert!(c.validate().is_err());
        c.p1 = 5;
        c.rho = 1.0;
        assert!(c.validate().is_err());
        assert!(PoissonSimCfg::new(10, 5, 2, 1.0).validate().is_ok());
    }

    #[test]
    fn deterministic_and_truth() {
        let c = GaussianSimCfg::new(20, 6, 2, 1.0);
        let a = gen_gaussian(&c, RngHandle::new(3)).unwrap();
        let b = gen_gaussian(&c, RngHandle::new(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.truth.relevant.iter().copied().collect::<Vec<_>>(), vec![0, 1]);
        let t = gen_poisson(&PoissonSimCfg::new(50, 3, 1, 0.5), RngHandle::new(1), LatentKind::Trajectory)
            .unwrap();
        assert!(t.latent.iter().sum::<f64>().abs() < 1e-10);
        assert!(t.data.values().iter().all(|&v| v >= 0.0 && v.fract() == 0.0));
    }

    #[test]
    fn noise_modes_differ_in_row_mean_spread() {
        // shared shift: row means carry the full sigma_eps^2 = 100;
        // per-feature noise averages out to (1 + 100) / p
        let row_mean_var = |mode| {
            let mut c = GaussianSimCfg::new(60, 200, 0, 0.0);
            c.sigma_eps = 10.0;
            c.noise = mode;
            let x = gen_gaussian(&c, RngHandle::new(9)).unwrap();
            let means: Vec<f64> = (0..60).map(|i| x.data.values().row(i).mean()).collect();
            let m = means.iter().sum::<f64>() / 60.0;
            means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 59.0
        };
        assert!(row_mean_var(NoiseMode::SharedShift) > 40.0);
        assert!(row_mean_var(NoiseMode::PerFeature) < 2.0);
    }
}
