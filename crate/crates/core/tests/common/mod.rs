//! Small statistics used as independent oracles by the integration tests.
#![allow(dead_code)]

pub mod cutoffs;
pub mod mc;

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// One-sample Kolmogorov-Smirnov distance between `xs` and `cdf`.
pub fn ks_distance(xs: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic KS critical value at level 0.01.
pub fn ks_crit_01(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}

/// Standard normal CDF through `erfc`, independent of the crate's `dist`.
pub fn phi(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Pearson chi-square goodness of fit of integer draws against a pmf, with
/// cells pooled until each expects at least 5. Returns (statistic, df).
pub fn chi_square_gof(draws: &[u64], pmf: impl Fn(u64) -> f64) -> (f64, usize) {
    let n = draws.len() as f64;
    let max = *draws.iter().max().unwrap_or(&0);
    let mut counts = vec![0.0; max as usize + 1];
    for &d in draws {
        counts[d as usize] += 1.0;
    }
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut obs, mut exp) = (0.0, 0.0);
    let mut tail = 1.0;
    for k in 0..=max {
        let pk = pmf(k);
        tail -= pk;
        obs += counts[k as usize];
        exp += n * pk;
        if exp >= 5.0 && n * tail >= 5.0 {
            cells.push((obs, exp));
            obs = 0.0;
            exp = 0.0;
        }
    }
    // last cell takes the upper tail
    exp += n * tail.max(0.0);
    match cells.last_mut() {
        Some(last) if exp < 5.0 => {
            last.0 += obs;
            last.1 += exp;
        }
        _ => cells.push((obs, exp)),
    }
    let stat = cells.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    (stat, cells.len().saturating_sub(1))
}

pub fn chi_square_crit_01(df: usize) -> f64 {
    ChiSquared::new(df as f64).unwrap().inverse_cdf(0.99)
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    for (k, &i) in idx.iter().enumerate() {
        r[i] = k as f64;
    }
    r
}

/// Spearman correlation for continuous data (no ties).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&ranks(x), &ranks(y))
}

/// `rho^|i-j|`.
pub fn ar1(p: usize, rho: f64) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_fn(p, p, |i, j| rho.powi(i.abs_diff(j) as i32))
}
