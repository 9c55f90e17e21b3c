//! Normal and Student-t helpers used across the crate.

use statrs::distribution::{ContinuousCDF, StudentsT};
use libm::erfc;

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Standard normal upper tail, accurate far into the tail.
pub fn norm_sf(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal quantile: initial estimate from the inverse
/// complementary error function, polished by one Halley step.
pub fn norm_ppf(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let mut x = -SQRT_2 * statrs::function::erf::erfc_inv(2.0 * p);
    let e = if x < 0.0 { norm_cdf(x) - p } else { (1.0 - p) - norm_sf(x) };
    let u = e / norm_pdf(x);
    if u.is_finite() {
        x -= u / (1.0 + 0.5 * x * u);
    }
    x
}

/// Two-sided p-value of a standard normal statistic.
pub fn two_sided_normal(z: f64) -> f64 {
    (2.0 * norm_sf(z.abs())).min(1.0)
}

/// Two-sided p-value of a Student-t statistic with `df` degrees of freedom.
pub fn two_sided_t(t: f64, df: f64) -> f64 {
    if !df.is_finite() || df > 1e7 {
        return two_sided_normal(t);
    }
    match StudentsT::new(0.0, 1.0, df) {
        Ok(dist) => (2.0 * dist.sf(t.abs())).min(1.0),
        Err(_) => two_sided_normal(t),
    }
}
