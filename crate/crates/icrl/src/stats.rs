//! Numeric validation and experiment statistics: finite differences,
//! rank correlation, goodness-of-fit, and probability of improvement.

use crate::error::{IcrlError, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Central finite-difference gradient of `f` at `x` with step `h`.
///
/// Written as an oracle: it never touches the autodiff machinery.
pub fn central_diff_grad(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let fp = f(&probe);
        probe[i] = orig - h;
        let fm = f(&probe);
        probe[i] = orig;
        out.push((fp - fm) / (2.0 * h));
    }
    out
}

/// Maximum relative error between two gradient vectors,
/// `|a−b| / max(|a|, |b|, 1e-6)` elementwise.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "max_rel_err: lengths {} vs {}", a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n−1 in the denominator); zero for n ≤ 1.
pub fn std_sample(xs: &[f64]) -> f64 {
    if xs.len() <= 1 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|&x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Ranks with ties averaged (the convention Spearman correlation uses).
fn ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("non-comparable value in ranks"));
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        num += (x - ma) * (y - mb);
        da += (x - ma) * (x - ma);
        db += (y - mb) * (y - mb);
    }
    if da == 0.0 || db == 0.0 {
        return 0.0;
    }
    num / (da * db).sqrt()
}

/// Spearman rank correlation with average-tie ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(IcrlError::invalid(
            "spearman",
            format!("need two equal-length series of ≥2 points, got {} and {}", a.len(), b.len()),
        ));
    }
    Ok(pearson(&ranks(a), &ranks(b)))
}

/// Result of a χ² goodness-of-fit test.
#[derive(Debug, Clone, Copy)]
pub struct GofResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson χ² goodness-of-fit of observed counts against expected
/// probabilities. Bins with expected count < 5 are merged into their right
/// neighbour (the final bin absorbs leftovers). A test that degenerates to a
/// single bin reports p = 1 when the observed mass sits entirely in it.
pub fn chi_square_gof(observed: &[u64], expected_probs: &[f64]) -> Result<GofResult> {
    if observed.len() != expected_probs.len() || observed.is_empty() {
        return Err(IcrlError::invalid(
            "chi_square_gof",
            format!("{} observed bins vs {} expected bins", observed.len(), expected_probs.len()),
        ));
    }
    let n: u64 = observed.iter().sum();
    if n == 0 {
        return Err(IcrlError::invalid("chi_square_gof", "no observations"));
    }

    // Merge adjacent bins until every expected count is ≥ 5.
    let mut merged: Vec<(f64, f64)> = Vec::new(); // (observed, expected)
    let mut acc_o = 0.0;
    let mut acc_e = 0.0;
    for (&o, &p) in observed.iter().zip(expected_probs) {
        acc_o += o as f64;
        acc_e += p * n as f64;
        if acc_e >= 5.0 {
            merged.push((acc_o, acc_e));
            acc_o = 0.0;
            acc_e = 0.0;
        }
    }
    if acc_e > 0.0 || acc_o > 0.0 {
        match merged.last_mut() {
            Some(last) => {
                last.0 += acc_o;
                last.1 += acc_e;
            }
            None => merged.push((acc_o, acc_e)),
        }
    }

    if merged.len() <= 1 {
        let stat = 0.0;
        return Ok(GofResult { statistic: stat, dof: 0, p_value: 1.0 });
    }

    let statistic: f64 = merged.iter().map(|&(o, e)| (o - e) * (o - e) / e).sum();
    let dof = merged.len() - 1;
    let dist = ChiSquared::new(dof as f64).expect("dof >= 1");
    let p_value = 1.0 - dist.cdf(statistic);
    Ok(GofResult { statistic, dof, p_value })
}

/// Probability-of-improvement estimate with a percentile bootstrap interval.
#[derive(Debug, Clone, Copy)]
pub struct PoiResult {
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

fn poi_point(a: &[f64], b: &[f64]) -> f64 {
    let mut score = 0.0;
    for &x in a {
        for &y in b {
            if x > y {
                score += 1.0;
            } else if x == y {
                score += 0.5;
            }
        }
    }
    score / (a.len() * b.len()) as f64
}

/// P(X > Y) + ½P(X = Y) over all cross pairs, with a 95% percentile
/// bootstrap interval over resampled score lists.
pub fn probability_of_improvement(
    a: &[f64],
    b: &[f64],
    bootstrap: usize,
    rng: &mut ChaCha8Rng,
) -> Result<PoiResult> {
    if a.is_empty() || b.is_empty() {
        return Err(IcrlError::invalid("probability_of_improvement", "empty score list"));
    }
    let estimate = poi_point(a, b);
    if bootstrap == 0 {
        return Ok(PoiResult { estimate, ci_low: estimate, ci_high: estimate });
    }
    let mut samples = Vec::with_capacity(bootstrap);
    for _ in 0..bootstrap {
        let ra: Vec<f64> = (0..a.len()).map(|_| a[rng.random_range(0..a.len())]).collect();
        let rb: Vec<f64> = (0..b.len()).map(|_| b[rng.random_range(0..b.len())]).collect();
        samples.push(poi_point(&ra, &rb));
    }
    samples.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let pick = |q: f64| samples[((q * (bootstrap - 1) as f64).round() as usize).min(bootstrap - 1)];
    Ok(PoiResult { estimate, ci_low: pick(0.025), ci_high: pick(0.975) })
}
