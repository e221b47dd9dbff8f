//! Goodness-of-fit tests, distances between samples and confidence intervals.

use rand::Rng;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{invalid, Error, Result};

/// Bins with smaller expected counts are merged into their neighbour.
pub const MIN_EXPECTED: f64 = 5.0;
/// Confidence half-widths are this many standard errors.
pub const CI_SIGMAS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Chi2Result {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson χ² test of observed counts against cell probabilities.
///
/// Cells are merged left to right until each expected count reaches
/// [`MIN_EXPECTED`]; a trailing light cell joins the previous group.
/// Observations in a cell of probability zero give `p = 0`.
pub fn chi2_gof(observed: &[u64], probs: &[f64]) -> Result<Chi2Result> {
    if observed.len() != probs.len() {
        return Err(Error::DimensionMismatch {
            expected: probs.len(),
            got: observed.len(),
        });
    }
    let n: u64 = observed.iter().sum();
    if n == 0 {
        return Err(Error::EmptyEnsemble);
    }
    let total_p: f64 = probs.iter().sum();
    if probs.iter().any(|p| !(*p >= 0.0)) || total_p <= 0.0 {
        return Err(invalid("probs", "must be nonnegative with positive sum"));
    }
    if observed.iter().zip(probs).any(|(&o, &p)| o > 0 && p == 0.0) {
        return Ok(Chi2Result {
            statistic: f64::INFINITY,
            dof: 0,
            p_value: 0.0,
        });
    }
    let nf = n as f64;
    let mut groups: Vec<(f64, f64)> = Vec::new();
    let (mut o, mut e) = (0.0, 0.0);
    for (&oi, &pi) in observed.iter().zip(probs) {
        o += oi as f64;
        e += nf * pi / total_p;
        if e >= MIN_EXPECTED {
            groups.push((o, e));
            o = 0.0;
            e = 0.0;
        }
    }
    if e > 0.0 || o > 0.0 {
        match groups.last_mut() {
            Some(last) => {
                last.0 += o;
                last.1 += e;
            }
            None => groups.push((o, e)),
        }
    }
    let statistic: f64 = groups.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let dof = groups.len().saturating_sub(1);
    let p_value = if dof == 0 {
        1.0
    } else {
        ChiSquared::new(dof as f64).expect("positive dof").sf(statistic)
    };
    Ok(Chi2Result { statistic, dof, p_value })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

fn sorted(a: &[f64]) -> Vec<f64> {
    let mut v = a.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

fn ks_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Kolmogorov tail `Q(λ) = 2 Σ (−1)^{k−1} e^{−2k²λ²}`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=200 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-17 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov–Smirnov test with the asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let statistic = ks_sorted(&sorted(a), &sorted(b));
    let ne = (a.len() * b.len()) as f64 / (a.len() + b.len()) as f64;
    let sq = ne.sqrt();
    let p_value = kolmogorov_q((sq + 0.12 + 0.11 / sq) * statistic);
    Ok(KsResult { statistic, p_value })
}

fn w1_sorted(a: &[f64], b: &[f64]) -> f64 {
    // ∫ |F_a − F_b| over the merged support
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut last = a[0].min(b[0]);
    let mut w = 0.0;
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        w += (i as f64 / na - j as f64 / nb).abs() * (x - last);
        last = x;
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
    }
    w
}

/// Wasserstein-1 distance between two empirical distributions on the line.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    Ok(w1_sorted(&sorted(a), &sorted(b)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

/// Percentile bootstrap intervals (95%) for the KS and W1 distances.
pub fn bootstrap_distances<R: Rng + ?Sized>(
    a: &[f64],
    b: &[f64],
    n_boot: usize,
    rng: &mut R,
) -> Result<(Interval, Interval)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let mut ks = Vec::with_capacity(n_boot);
    let mut w1 = Vec::with_capacity(n_boot);
    let mut ra = vec![0.0; a.len()];
    let mut rb = vec![0.0; b.len()];
    for _ in 0..n_boot {
        ra.iter_mut().for_each(|v| *v = a[rng.random_range(0..a.len())]);
        rb.iter_mut().for_each(|v| *v = b[rng.random_range(0..b.len())]);
        ra.sort_by(f64::total_cmp);
        rb.sort_by(f64::total_cmp);
        ks.push(ks_sorted(&ra, &rb));
        w1.push(w1_sorted(&ra, &rb));
    }
    Ok((percentile_interval(ks), percentile_interval(w1)))
}

fn percentile_interval(mut v: Vec<f64>) -> Interval {
    if v.is_empty() {
        return Interval { lo: f64::NAN, hi: f64::NAN };
    }
    v.sort_by(f64::total_cmp);
    let at = |q: f64| v[((v.len() - 1) as f64 * q).round() as usize];
    Interval {
        lo: at(0.025),
        hi: at(0.975),
    }
}

/// Mean with a batch-means standard error and a `CI_SIGMAS`-wide interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BatchEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub ci: f64,
}

/// Batch means over consecutive blocks. With fewer samples than batches
/// every sample is its own batch.
pub fn batch_means(samples: &[f64], n_batches: usize) -> Result<BatchEstimate> {
    if samples.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let b = n_batches.clamp(1, samples.len());
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    if b < 2 {
        return Ok(BatchEstimate {
            mean,
            std_error: f64::INFINITY,
            ci: f64::INFINITY,
        });
    }
    let size = samples.len() / b;
    let means: Vec<f64> = (0..b)
        .map(|k| {
            let end = if k + 1 == b { samples.len() } else { (k + 1) * size };
            let block = &samples[k * size..end];
            block.iter().sum::<f64>() / block.len() as f64
        })
        .collect();
    Ok(weighted_batch_estimate(mean, &means))
}

/// Standard error of `mean` from equally weighted batch means.
pub(crate) fn weighted_batch_estimate(mean: f64, batch_means: &[f64]) -> BatchEstimate {
    let b = batch_means.len() as f64;
    let var = batch_means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (b - 1.0);
    let std_error = (var / b).sqrt();
    BatchEstimate {
        mean,
        std_error,
        ci: CI_SIGMAS * std_error,
    }
}
