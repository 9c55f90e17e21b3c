mod common;

use common::{ks_crit_01, ks_distance, phi};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use splitfdr::assoc::*;
use splitfdr::cluster::LatentLabels;
use splitfdr::data::DataMatrix;
use splitfdr::rng::RngHandle;
use splitfdr::simgen::{gen_poisson, LatentKind, PoissonSimCfg};
use statrs::distribution::{ContinuousCDF, StudentsT};

fn labels(v: &[u8]) -> LatentLabels {
    LatentLabels::discrete(v.to_vec()).unwrap()
}

/// Balanced random labels in {1, 2}.
fn random_labels<R: Rng>(rng: &mut R, n: usize) -> LatentLabels {
    let mut v: Vec<u8> = (0..n).map(|i| if i < n / 2 { 1 } else { 2 }).collect();
    v.shuffle(rng);
    labels(&v)
}

#[test]
fn wilcoxon_matches_enumeration() {
    // All C(4,2) ways to give cluster 1 two of the ranks 1..4.
    let ranks = [1.0, 2.0, 3.0, 4.0];
    let mut sums = Vec::new();
    for a in 0..4 {
        for b in a + 1..4 {
            sums.push(ranks[a] + ranks[b]);
        }
    }
    let mean = sums.iter().sum::<f64>() / sums.len() as f64;
    let var = sums.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / sums.len() as f64;
    let observed = 3.0 + 4.0;
    let want = (observed - mean - 0.5) / var.sqrt();

    let z = wilcoxon_signed(&[3.0, 4.0, 1.0, 2.0], &labels(&[1, 1, 2, 2])).unwrap();
    assert!((z - want).abs() < 1e-12, "{z} vs {want}");
    assert!((z - 1.161_895).abs() < 1e-6);
    let flipped = wilcoxon_signed(&[3.0, 4.0, 1.0, 2.0], &labels(&[2, 2, 1, 1])).unwrap();
    assert_eq!(flipped, -z);
}

#[test]
fn wilcoxon_enumeration_with_ties() {
    // Exact permutation moments of the midrank sum for a tied sample.
    let x = [1.0, 2.0, 2.0, 5.0, 5.0, 5.0];
    let mid = [1.0, 2.5, 2.5, 5.0, 5.0, 5.0];
    let lab = [1u8, 2, 1, 1, 2, 2];
    let n1 = 3;
    let mut sums = Vec::new();
    for mask in 0u32..64 {
        if mask.count_ones() == n1 {
            sums.push((0..6).filter(|i| mask >> i & 1 == 1).map(|i| mid[i]).sum::<f64>());
        }
    }
    let mean = sums.iter().sum::<f64>() / sums.len() as f64;
    let var = sums.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / sums.len() as f64;
    let observed: f64 = (0..6).filter(|&i| lab[i] == 1).map(|i| mid[i]).sum();
    let d = observed - mean;
    let want = (d.abs() - 0.5).max(0.0).copysign(d) / var.sqrt();
    let z = wilcoxon_signed(&x, &labels(&lab)).unwrap();
    assert!((z - want).abs() < 1e-12, "{z} vs {want}");
}

#[test]
fn glm_saturated_two_points() {
    // Two points fit exactly: mu = (1, 3) at t = (-1, 1).
    let t = LatentLabels::continuous(vec![-1.0, 1.0]).unwrap();
    let fit = fit_poisson_loglinear(&[1.0, 3.0], &[-1.0, 1.0], 100, 1e-12).unwrap();
    let beta1 = 3f64.ln() / 2.0;
    assert!((fit.slope - beta1).abs() < 1e-8, "{}", fit.slope);
    assert!((fit.intercept - 3f64.ln() / 2.0).abs() < 1e-8);
    // Fisher information X'WX with W = diag(1, 3): [[4, 2], [2, 4]]
    let (a, b, d): (f64, f64, f64) = (4.0, 2.0, 4.0);
    let var_slope = a / (a * d - b * b);
    let wald = beta1 / var_slope.sqrt();
    let cfg = TestConfig {
        glm_tol: 1e-12,
        ..TestConfig::new(TestKind::PoisGlmWald)
    };
    let w = pois_glm_wald(&[1.0, 3.0], &t, &cfg).unwrap();
    assert!((w - wald).abs() < 1e-6, "{w} vs {wald}");
    assert!((w - 0.9514).abs() < 1e-4);
}

#[test]
fn p1_reduces_to_scalar_ops() {
    let x = [0.3, -1.2, 2.5, 0.7, 1.1, -0.4];
    let lab = labels(&[1, 2, 1, 2, 1, 2]);
    let d = DataMatrix::from_row_major(6, 1, &x).unwrap();
    let cases: [(TestConfig, f64); 3] = [
        (TestConfig::z_known_var(vec![1.3]), z_stat_known_var(&x, &lab, 1.3).unwrap()),
        (TestConfig::new(TestKind::WelchT), welch_t(&x, &lab).unwrap()),
        (TestConfig::new(TestKind::WilcoxonSigned), wilcoxon_signed(&x, &lab).unwrap()),
    ];
    for (cfg, want) in cases {
        let v = test_all_features(&d, &lab, &cfg, 1).unwrap();
        assert_eq!(v.stats, vec![want], "{:?}", cfg.kind);
    }
    let y = [0.0, 1.0, 3.0, 2.0, 6.0, 9.0];
    let t = LatentLabels::continuous(vec![-2.0, -1.0, 0.0, 0.5, 1.0, 1.5]).unwrap();
    let cfg = TestConfig::new(TestKind::PoisGlmWald);
    let dy = DataMatrix::from_row_major(6, 1, &y).unwrap();
    let v = test_all_features(&dy, &t, &cfg, 1).unwrap();
    assert_eq!(v.stats, vec![pois_glm_wald(&y, &t, &cfg).unwrap()]);
}

#[test]
fn column_permutation_equivariance() {
    let mut rng = RngHandle::new(5).rng();
    let (n, p) = (30, 7);
    let vals: Vec<f64> = (0..n * p).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let d = DataMatrix::from_row_major(n, p, &vals).unwrap();
    let lab = random_labels(&mut rng, n);
    let perm = vec![3, 0, 6, 1, 5, 2, 4];
    let dp = d.select_columns(&perm);
    for cfg in [
        TestConfig::new(TestKind::WelchT),
        TestConfig::new(TestKind::WilcoxonSigned),
        TestConfig::z_known_var(vec![1.0; p]),
    ] {
        let a = test_all_features(&d, &lab, &cfg, 1).unwrap().stats;
        let b = test_all_features(&dp, &lab, &cfg, 1).unwrap().stats;
        for (k, &j) in perm.iter().enumerate() {
            assert_eq!(b[k], a[j]);
        }
    }
}

#[test]
fn z_null_is_standard_normal() {
    let mut rng = RngHandle::new(11).rng();
    let n = 20;
    let zs: Vec<f64> = (0..10_000)
        .map(|_| {
            let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let lab = random_labels(&mut rng, n);
            z_stat_known_var(&x, &lab, 1.0).unwrap()
        })
        .collect();
    let d = ks_distance(&zs, phi);
    assert!(d < ks_crit_01(zs.len()), "KS {d}");
}

#[test]
fn welch_null_matches_student_t() {
    let mut rng = RngHandle::new(12).rng();
    let n = 16;
    let us: Vec<f64> = (0..10_000)
        .map(|_| {
            let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let lab = random_labels(&mut rng, n);
            let (t, df) = welch_t_with_df(&x, &lab).unwrap();
            StudentsT::new(0.0, 1.0, df).unwrap().cdf(t)
        })
        .collect();
    let d = ks_distance(&us, |u| u.clamp(0.0, 1.0));
    assert!(d < ks_crit_01(us.len()), "KS {d}");
}

#[test]
fn wilcoxon_null_is_centered() {
    let mut rng = RngHandle::new(13).rng();
    let n = 20;
    let zs: Vec<f64> = (0..10_000)
        .map(|_| {
            let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let lab = random_labels(&mut rng, n);
            wilcoxon_signed(&x, &lab).unwrap()
        })
        .collect();
    let m = common::mean(&zs);
    assert!(m.abs() < 0.05, "mean {m}");
}

#[test]
fn glm_null_wald_is_standard_normal() {
    let mut cfg = PoissonSimCfg::new(500, 2000, 0, 0.0);
    cfg.sigma_eps = 0.0;
    let sim = gen_poisson(&cfg, RngHandle::new(21), LatentKind::Trajectory).unwrap();
    let t = LatentLabels::continuous(sim.latent.clone()).unwrap();
    let v = test_all_features(&sim.data, &t, &TestConfig::new(TestKind::PoisGlmWald), 1).unwrap();
    assert!(v.flags.iter().all(|f| *f == FeatureFlag::Ok));
    let d = ks_distance(&v.stats, phi);
    assert!(d < ks_crit_01(v.stats.len()), "KS {d}");
}

#[test]
fn null_rejection_rate_near_level() {
    let mut rng = RngHandle::new(31).rng();
    let (n, p) = (100, 10_000);
    let vals: Vec<f64> = (0..n * p).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let d = DataMatrix::from_row_major(n, p, &vals).unwrap();
    let lab = random_labels(&mut rng, n);
    let v = test_all_features(&d, &lab, &TestConfig::z_known_var(vec![1.0; p]), 1).unwrap();
    let frac = v.stats.iter().filter(|z| z.abs() > 1.96).count() as f64 / p as f64;
    assert!((frac - 0.05).abs() <= 0.01, "{frac}");
}

#[test]
fn pvalues_use_welch_df() {
    let x = [1.0, 2.0, 4.0, 0.0, 0.5, 0.2];
    let lab = labels(&[1, 1, 1, 2, 2, 2]);
    let d = DataMatrix::from_row_major(6, 1, &x).unwrap();
    let v = test_all_features(&d, &lab, &TestConfig::new(TestKind::WelchT), 1).unwrap();
    let (t, df) = welch_t_with_df(&x, &lab).unwrap();
    let want = 2.0 * (1.0 - StudentsT::new(0.0, 1.0, df).unwrap().cdf(t.abs()));
    assert!((v.two_sided_pvalues()[0] - want).abs() < 1e-10);
}
