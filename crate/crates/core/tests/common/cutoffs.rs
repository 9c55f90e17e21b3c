//! Brute-force cutoff oracles: dense threshold scans and exhaustive search
//! over the number of dropped features.

use rand::Rng;
use splitfdr::mds::TieRule;

pub fn fdp_at(m: &[f64], t: f64) -> f64 {
    let neg = m.iter().filter(|&&x| x < -t).count() as f64;
    let pos = m.iter().filter(|&&x| x > t).count() as f64;
    neg / pos.max(1.0)
}

/// Scans a dense grid on `(0, max|M|]`, every breakpoint `|M_j|` and every
/// midpoint between consecutive breakpoints; returns the selection at the
/// smallest qualifying threshold.
pub fn brute_force_selection(m: &[f64], q: f64) -> Vec<usize> {
    let mut bps: Vec<f64> = m.iter().map(|x| x.abs()).filter(|&x| x > 0.0).collect();
    bps.sort_by(f64::total_cmp);
    bps.dedup();
    let Some(&top) = bps.last() else {
        return Vec::new();
    };
    let mut ts: Vec<f64> = (1..=10_000).map(|k| top * k as f64 / 10_000.0).collect();
    ts.extend(&bps);
    let mut prev = 0.0;
    for &b in &bps {
        ts.push((prev + b) / 2.0);
        prev = b;
    }
    ts.sort_by(f64::total_cmp);
    for t in ts {
        if fdp_at(m, t) <= q {
            return (0..m.len()).filter(|&j| m[j] > t).collect();
        }
    }
    unreachable!("t = max|M| always qualifies")
}

pub fn random_mirrors<R: Rng>(rng: &mut R) -> Vec<f64> {
    let p = rng.random_range(1..=12);
    let discrete = rng.random_bool(0.5);
    (0..p)
        .map(|_| {
            let mag = if discrete {
                rng.random_range(0..5) as f64
            } else {
                rng.random::<f64>() * 10.0
            };
            // lean positive, as with signal present
            if rng.random_bool(0.65) {
                mag
            } else {
                -mag
            }
        })
        .collect()
}

/// Largest l by trying every l and summing that many smallest rates.
pub fn brute_force_ell(rates: &[f64], q: f64) -> usize {
    let mut best = 0;
    for l in 0..=rates.len() {
        let mut r = rates.to_vec();
        r.sort_by(f64::total_cmp);
        let s: f64 = r[..l].iter().sum();
        if s <= q + 1e-12 {
            best = l;
        }
    }
    best
}

pub fn brute_force_mds(rates: &[f64], q: f64, rule: TieRule) -> (usize, Vec<usize>) {
    let l = brute_force_ell(rates, q);
    let mut sorted = rates.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cut = if l == 0 { 0.0 } else { sorted[l - 1] };
    let sel = match rule {
        TieRule::Strict => (0..rates.len()).filter(|&j| rates[j] > cut).collect(),
        TieRule::KeepTop => {
            let strict: Vec<usize> = (0..rates.len()).filter(|&j| rates[j] > cut).collect();
            let max = sorted.last().copied().unwrap_or(0.0);
            if strict.is_empty() && max > 0.0 {
                (0..rates.len()).filter(|&j| rates[j] == max).collect()
            } else {
                strict
            }
        }
        TieRule::Positional => {
            // drop the l features that come first by (rate, index)
            let mut dropped = vec![false; rates.len()];
            for _ in 0..l {
                let j = (0..rates.len())
                    .filter(|&j| !dropped[j])
                    .min_by(|&a, &b| rates[a].total_cmp(&rates[b]).then(a.cmp(&b)))
                    .unwrap();
                dropped[j] = true;
            }
            (0..rates.len()).filter(|&j| !dropped[j] && rates[j] > 0.0).collect()
        }
    };
    (l, sel)
}

pub fn random_selections<R: Rng>(rng: &mut R, p: usize) -> Vec<Vec<usize>> {
    let m = rng.random_range(1..=10);
    (0..m)
        .map(|_| (0..p).filter(|_| rng.random_bool(0.3)).collect())
        .collect()
}
