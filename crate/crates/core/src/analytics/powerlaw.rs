//! Discrete power-law fit of call-frequency counts: xmin by KS minimisation,
//! alpha by the discrete approximate MLE, and a semi-parametric bootstrap
//! goodness-of-fit p-value.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PowerLawError {
    #[error("need at least {min} samples, got {got}")]
    TooFewSamples { min: usize, got: usize },
    #[error("samples must be positive counts")]
    NonPositive,
    #[error("all samples are equal; no tail to fit")]
    Degenerate,
}

#[derive(Debug, Clone)]
pub struct PowerLawOptions {
    pub min_samples: usize,
    pub replicates: usize,
    pub seed: u64,
    /// Smallest admissible tail as a share of all samples. Keeps the xmin
    /// scan from settling on a handful of extreme values.
    pub min_tail_fraction: f64,
}

impl Default for PowerLawOptions {
    fn default() -> Self {
        PowerLawOptions { min_samples: 50, replicates: 1000, seed: 0, min_tail_fraction: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerLawFit {
    pub alpha_hat: f64,
    pub xmin_hat: u64,
    pub ks_distance: f64,
    pub bootstrap_p: f64,
    pub n_tail: usize,
    pub n: usize,
    pub replicates: usize,
    /// KS distance of every bootstrap replicate, in replicate order.
    #[serde(skip)]
    pub bootstrap_ks: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct TailFit {
    alpha: f64,
    xmin: u64,
    ks: f64,
    n_tail: usize,
}

/// Distinct values of a sorted slice with their first index.
fn runs(sorted: &[u64]) -> Vec<(u64, usize)> {
    let mut out: Vec<(u64, usize)> = Vec::new();
    for (i, &x) in sorted.iter().enumerate() {
        if out.last().map(|(v, _)| *v) != Some(x) {
            out.push((x, i));
        }
    }
    out
}

/// P(X ≥ k) of the continuous approximation to the discrete law.
fn ccdf(k: f64, xmin: u64, alpha: f64) -> f64 {
    ((k - 0.5) / (xmin as f64 - 0.5)).powf(1.0 - alpha)
}

/// Maximum gap between the empirical and model CDFs of the tail `x ≥ xmin`,
/// checked on both sides of every step.
fn ks_tail(runs: &[(u64, usize)], n: usize, start: usize, xmin: u64, alpha: f64) -> f64 {
    let n_tail = (n - runs[start].1) as f64;
    let base = runs[start].1;
    let mut worst: f64 = 0.0;
    for (j, &(v, first)) in runs.iter().enumerate().skip(start) {
        let below = (first - base) as f64 / n_tail;
        let next = runs.get(j + 1).map_or(n, |r| r.1);
        let upto = (next - base) as f64 / n_tail;
        let v = v as f64;
        worst = worst
            .max((below - (1.0 - ccdf(v, xmin, alpha))).abs())
            .max((upto - (1.0 - ccdf(v + 1.0, xmin, alpha))).abs());
    }
    worst
}

fn fit_sorted(sorted: &[u64], min_tail_fraction: f64) -> Option<TailFit> {
    let n = sorted.len();
    let runs = runs(sorted);
    if runs.len() < 2 {
        return None;
    }
    let min_tail = ((min_tail_fraction * n as f64).ceil() as usize).max(2);
    let mut suffix_ln = vec![0.0; n + 1];
    for i in (0..n).rev() {
        suffix_ln[i] = suffix_ln[i + 1] + (sorted[i] as f64).ln();
    }
    let mut best: Option<TailFit> = None;
    for (j, &(xmin, first)) in runs.iter().enumerate().take(runs.len() - 1) {
        let n_tail = n - first;
        if n_tail < min_tail {
            break;
        }
        let log_sum = suffix_ln[first] - n_tail as f64 * (xmin as f64 - 0.5).ln();
        let alpha = 1.0 + n_tail as f64 / log_sum;
        let ks = ks_tail(&runs, n, j, xmin, alpha);
        if best.is_none_or(|b| ks < b.ks) {
            best = Some(TailFit { alpha, xmin, ks, n_tail });
        }
    }
    best
}

/// KS distance of `samples ≥ xmin` against the law with exponent `alpha`.
pub fn ks_distance(samples: &[u64], xmin: u64, alpha: f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    let runs = runs(&sorted);
    match runs.iter().position(|(v, _)| *v >= xmin) {
        Some(start) => ks_tail(&runs, sorted.len(), start, xmin, alpha),
        None => 1.0,
    }
}

/// One draw by inverse-CDF sampling of the continuous approximation.
pub fn sample_discrete<R: Rng + ?Sized>(rng: &mut R, xmin: u64, alpha: f64) -> u64 {
    let r: f64 = rng.gen();
    let x = (xmin as f64 - 0.5) * (1.0 - r).powf(-1.0 / (alpha - 1.0)) + 0.5;
    x.floor().min(1e18) as u64
}

fn validate(samples: &[u64], options: &PowerLawOptions) -> Result<(), PowerLawError> {
    if samples.len() < options.min_samples.max(2) {
        return Err(PowerLawError::TooFewSamples { min: options.min_samples.max(2), got: samples.len() });
    }
    if samples.contains(&0) {
        return Err(PowerLawError::NonPositive);
    }
    Ok(())
}

/// Fits xmin and alpha without the bootstrap; `bootstrap_p` is NaN.
pub fn estimate(samples: &[u64], options: &PowerLawOptions) -> Result<PowerLawFit, PowerLawError> {
    validate(samples, options)?;
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    let fit = fit_sorted(&sorted, options.min_tail_fraction).ok_or(PowerLawError::Degenerate)?;
    Ok(PowerLawFit {
        alpha_hat: fit.alpha,
        xmin_hat: fit.xmin,
        ks_distance: fit.ks,
        bootstrap_p: f64::NAN,
        n_tail: fit.n_tail,
        n: samples.len(),
        replicates: 0,
        bootstrap_ks: Vec::new(),
    })
}

/// Full fit. Each bootstrap replicate redraws the tail from the fitted law
/// and the body from the observed values below xmin, then refits with the
/// same procedure; `bootstrap_p` is the share of replicates whose KS distance
/// is at least the observed one. Replicate `i` uses its own ChaCha stream, so
/// results do not depend on thread scheduling.
pub fn fit_power_law(samples: &[u64], options: &PowerLawOptions) -> Result<PowerLawFit, PowerLawError> {
    let mut fit = estimate(samples, options)?;
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let body = &sorted[..n - fit.n_tail];
    let p_tail = fit.n_tail as f64 / n as f64;
    let (xmin, alpha) = (fit.xmin_hat, fit.alpha_hat);

    let ks: Vec<f64> = (0..options.replicates)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
            rng.set_stream(i as u64);
            let mut synthetic: Vec<u64> = (0..n)
                .map(|_| {
                    if body.is_empty() || rng.gen::<f64>() < p_tail {
                        sample_discrete(&mut rng, xmin, alpha)
                    } else {
                        body[rng.gen_range(0..body.len())]
                    }
                })
                .collect();
            synthetic.sort_unstable();
            fit_sorted(&synthetic, options.min_tail_fraction).map_or(0.0, |f| f.ks)
        })
        .collect();

    let exceed = ks.iter().filter(|&&d| d >= fit.ks_distance).count();
    fit.bootstrap_p = if ks.is_empty() { f64::NAN } else { exceed as f64 / ks.len() as f64 };
    fit.replicates = ks.len();
    fit.bootstrap_ks = ks;
    Ok(fit)
}
