//! Monte Carlo oracles for the closed-form theory.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Binomial, StandardNormal};
use splitfdr::rng::RngHandle;

pub const Z975: f64 = 1.959_963_984_540_054;

/// Rejection rate of the known-variance two-sided z-test when `k ~ Binom(m,
/// p_e)` samples of each class carry the wrong label.
///
/// Group means of unit-variance normals are themselves normal, so each
/// replicate draws the two means directly: observed group 1 holds `m - k`
/// class-1 and `k` class-2 samples, group 2 the reverse.
pub fn mislabel_power(delta: f64, m: usize, n: usize, pe: f64, reps: usize, seed: u64) -> f64 {
    let mut rng = RngHandle::new(seed).rng();
    let binom = Binomial::new(m as u64, pe).unwrap();
    let se = ((m + n) as f64 / (m * n) as f64).sqrt();
    let mut reject = 0;
    for _ in 0..reps {
        let k = rng.sample(binom) as f64;
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let mean1 = k * delta / m as f64 + z1 / (m as f64).sqrt();
        let mean2 = (n as f64 - k) * delta / n as f64 + z2 / (n as f64).sqrt();
        reject += (((mean2 - mean1) / se).abs() > Z975) as usize;
    }
    reject as f64 / reps as f64
}

/// Error rate of the hyperplane through the midpoint with normal
/// `Sigma^{-1} delta`, classifying balanced draws from N(0, Sigma) and
/// N(delta, Sigma).
pub fn hyperplane_error(delta: &DVector<f64>, cov: &DMatrix<f64>, draws: usize, seed: u64) -> f64 {
    let p = delta.len();
    let l = cov.clone().cholesky().unwrap().l();
    let w = cov.clone().try_inverse().unwrap() * delta;
    let mut rng = RngHandle::new(seed).rng();
    let mut wrong = 0;
    for _ in 0..draws {
        let class2 = rng.random_bool(0.5);
        let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut x = &l * z;
        if class2 {
            x += delta;
        }
        let score = w.dot(&(x - delta * 0.5));
        wrong += ((score > 0.0) != class2) as usize;
    }
    wrong as f64 / draws as f64
}

/// Draws of W, the minority-class share of a random half, for `n` samples
/// of which `n1` are class 1.
pub fn split_minority_shares(n: usize, n1: usize, splits: usize, seed: u64) -> Vec<f64> {
    let half = n / 2;
    let mut rng = RngHandle::new(seed).rng();
    (0..splits)
        .map(|_| {
            let x = sample(&mut rng, n, half).iter().filter(|&i| i < n1).count();
            x.min(half - x) as f64 / half as f64
        })
        .collect()
}
