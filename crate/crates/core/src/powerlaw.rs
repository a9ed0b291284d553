//! Continuous power-law tail fitting and model comparison.
//!
//! The tail model is `p(x) = (α-1)/x_min · (x/x_min)^(-α)` on `x >= x_min`.
//! The lower bound is chosen by scanning every distinct observed value and
//! keeping the candidate whose fitted tail has the smallest KS distance.
//! Exponential and log-normal fits on the same support serve as baselines
//! for likelihood-ratio comparisons, and a semi-parametric bootstrap gives a
//! goodness-of-fit p-value.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::spectra::Spectrum;

/// Smallest tail the x_min scan will consider by default.
pub const DEFAULT_MIN_TAIL: usize = 10;
/// Default significance level for likelihood-ratio and bootstrap decisions.
pub const DEFAULT_SIGNIFICANCE: f64 = 0.1;
/// Smallest accepted number of bootstrap replicates.
pub const MIN_BOOTSTRAP: usize = 100;

/// Values at or above a lower bound, ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct TailSample {
    x_min: f64,
    values: Vec<f64>,
}

impl TailSample {
    pub fn new(x_min: f64, mut values: Vec<f64>) -> Result<Self> {
        if !(x_min > 0.0 && x_min.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "x_min must be positive and finite, got {x_min}"
            )));
        }
        if values.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "a tail needs at least 2 values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("tail values must be finite".into()));
        }
        values.sort_by(f64::total_cmp);
        if values[0] < x_min {
            return Err(Error::InvalidInput(format!(
                "tail value {} lies below x_min {x_min}",
                values[0]
            )));
        }
        Ok(TailSample { x_min, values })
    }

    /// The eigenvalues of `spectrum` at or above `x_min`.
    pub fn from_spectrum(spectrum: &Spectrum, x_min: f64) -> Result<Self> {
        let ev = spectrum.eigenvalues();
        let start = ev.partition_point(|&v| v < x_min);
        TailSample::new(x_min, ev[start..].to_vec())
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n_tail(&self) -> usize {
        self.values.len()
    }
}

/// A fitted tail density on `[x_min, ∞)`.
pub trait TailModel {
    fn x_min(&self) -> f64;
    fn ln_pdf(&self, x: f64) -> f64;

    fn log_likelihood(&self, values: &[f64]) -> f64 {
        values.iter().map(|&x| self.ln_pdf(x)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub alpha: f64,
    pub x_min: f64,
    pub n_tail: usize,
    pub ks_d: f64,
    pub log_likelihood: f64,
}

impl TailModel for PowerLawFit {
    fn x_min(&self) -> f64 {
        self.x_min
    }

    fn ln_pdf(&self, x: f64) -> f64 {
        ((self.alpha - 1.0) / self.x_min).ln() - self.alpha * (x / self.x_min).ln()
    }
}

/// Shifted exponential `λ·exp(-λ(x - x_min))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentialFit {
    pub lambda: f64,
    pub x_min: f64,
    pub log_likelihood: f64,
}

impl TailModel for ExponentialFit {
    fn x_min(&self) -> f64 {
        self.x_min
    }

    fn ln_pdf(&self, x: f64) -> f64 {
        self.lambda.ln() - self.lambda * (x - self.x_min)
    }
}

/// Log-normal renormalized to `[x_min, ∞)`.
///
/// `mu` and `sigma` come from the untruncated moments of `ln x`; only the
/// density used for likelihoods accounts for the truncation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalFit {
    pub mu: f64,
    pub sigma: f64,
    pub x_min: f64,
    pub log_likelihood: f64,
}

impl LogNormalFit {
    fn ln_survival_at_xmin(&self) -> f64 {
        let z = (self.x_min.ln() - self.mu) / (self.sigma * std::f64::consts::SQRT_2);
        (0.5 * erfc(z)).max(f64::MIN_POSITIVE).ln()
    }
}

impl TailModel for LogNormalFit {
    fn x_min(&self) -> f64 {
        self.x_min
    }

    fn ln_pdf(&self, x: f64) -> f64 {
        let lx = x.ln();
        let z = (lx - self.mu) / self.sigma;
        -lx - self.sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * z * z - self.ln_survival_at_xmin()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Winner {
    PowerLaw,
    Alternative,
    Undecided,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    /// Sum of pointwise log-likelihood differences, power law minus alternative.
    pub r: f64,
    pub normalized_r: f64,
    /// Two-sided p-value of the normalized ratio.
    pub p_value: f64,
    pub winner: Winner,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoodnessOfFit {
    pub p_value: f64,
    pub n_bootstrap: usize,
    pub observed_d: f64,
}

/// Maximum-likelihood exponent for a tail with known `x_min`.
pub fn fit_alpha(tail: &TailSample) -> Result<f64> {
    let log_sum: f64 = tail.values.iter().map(|&x| (x / tail.x_min).ln()).sum();
    if !(log_sum > 0.0) {
        return Err(Error::DegenerateSample(
            "every tail value equals x_min; the exponent is unbounded".into(),
        ));
    }
    Ok(1.0 + tail.n_tail() as f64 / log_sum)
}

/// Power-law CDF `1 - (x/x_min)^(1-α)`.
pub fn pl_cdf(x: f64, alpha: f64, x_min: f64) -> Result<f64> {
    check_exponent(alpha)?;
    if !(x_min > 0.0) {
        return Err(Error::Domain(format!("x_min must be positive, got {x_min}")));
    }
    if x < x_min {
        return Err(Error::Domain(format!("x = {x} lies below x_min = {x_min}")));
    }
    Ok(1.0 - (x / x_min).powf(1.0 - alpha))
}

/// Inverse power-law CDF; `u` in `[0, 1)`.
#[inline]
pub fn pl_quantile(u: f64, alpha: f64, x_min: f64) -> f64 {
    x_min * (1.0 - u).powf(-1.0 / (alpha - 1.0))
}

fn check_exponent(alpha: f64) -> Result<()> {
    if alpha > 1.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("power-law exponent must exceed 1, got {alpha}")))
    }
}

/// Exact supremum distance between the tail's ECDF and the power-law CDF.
pub fn ks_distance(tail: &TailSample, alpha: f64) -> Result<f64> {
    check_exponent(alpha)?;
    let n = tail.n_tail() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in tail.values.iter().enumerate() {
        let f = 1.0 - (x / tail.x_min).powf(1.0 - alpha);
        let above = (i + 1) as f64 / n - f;
        let below = f - i as f64 / n;
        d = d.max(above.abs()).max(below.abs());
    }
    Ok(d)
}

fn pl_log_likelihood(tail: &TailSample, alpha: f64) -> f64 {
    let log_sum: f64 = tail.values.iter().map(|&x| (x / tail.x_min).ln()).sum();
    tail.n_tail() as f64 * ((alpha - 1.0) / tail.x_min).ln() - alpha * log_sum
}

/// Fits the exponent for a fixed `x_min` and reports the complete fit.
pub fn fit_power_law(tail: &TailSample) -> Result<PowerLawFit> {
    let alpha = fit_alpha(tail)?;
    Ok(PowerLawFit {
        alpha,
        x_min: tail.x_min,
        n_tail: tail.n_tail(),
        ks_d: ks_distance(tail, alpha)?,
        log_likelihood: pl_log_likelihood(tail, alpha),
    })
}

/// Chooses `x_min` among the distinct positive eigenvalues by minimum KS
/// distance, keeping at least `min_tail` points in the tail.
pub fn select_xmin(spectrum: &Spectrum, min_tail: usize) -> Result<PowerLawFit> {
    select_xmin_sorted(spectrum.positive(), min_tail)
}

/// [`select_xmin`] on an ascending slice of strictly positive values.
pub fn select_xmin_sorted(positive: &[f64], min_tail: usize) -> Result<PowerLawFit> {
    if min_tail < 2 {
        return Err(Error::InvalidConfig(format!(
            "min_tail must be at least 2, got {min_tail}"
        )));
    }
    let n_total = positive.len();
    if n_total < min_tail {
        return Err(Error::InsufficientTail {
            needed: min_tail,
            found: n_total,
        });
    }
    debug_assert!(positive.windows(2).all(|w| w[0] <= w[1]));
    debug_assert!(positive.first().is_some_and(|&v| v > 0.0));

    // Logs relative to the smallest value: exact ratios keep the scan
    // invariant under power-of-two rescaling.
    let base = positive[0];
    let logs: Vec<f64> = positive.iter().map(|&x| (x / base).ln()).collect();
    let mut suffix = vec![0.0; n_total + 1];
    for i in (0..n_total).rev() {
        suffix[i] = suffix[i + 1] + logs[i];
    }

    let mut best: Option<(f64, usize)> = None;
    let mut i = 0;
    while i + min_tail <= n_total {
        let start = i;
        // Skip to the next distinct value for the following candidate.
        while i < n_total && positive[i] == positive[start] {
            i += 1;
        }
        let n = n_total - start;
        let log_sum = suffix[start] - n as f64 * logs[start];
        if !(log_sum > 0.0) {
            continue;
        }
        let alpha = 1.0 + n as f64 / log_sum;
        let bound = best.map_or(f64::INFINITY, |(d, _)| d);
        if let Some(d) = scan_ks(&logs[start..], logs[start], alpha, bound) {
            best = Some((d, start));
        }
    }

    let (_, start) =
        best.ok_or_else(|| Error::DegenerateSample("no candidate x_min leaves a non-degenerate tail".into()))?;
    let tail = TailSample {
        x_min: positive[start],
        values: positive[start..].to_vec(),
    };
    fit_power_law(&tail)
}

/// KS distance on log-ratios, abandoning the candidate once it cannot beat
/// `bound`.
fn scan_ks(logs: &[f64], log_min: f64, alpha: f64, bound: f64) -> Option<f64> {
    let n = logs.len() as f64;
    let slope = 1.0 - alpha;
    let mut d: f64 = 0.0;
    for (i, &l) in logs.iter().enumerate() {
        let f = -(slope * (l - log_min)).exp_m1();
        let above = (i + 1) as f64 / n - f;
        let below = f - i as f64 / n;
        d = d.max(above.abs()).max(below.abs());
        if d >= bound {
            return None;
        }
    }
    Some(d)
}

/// MLE of the shifted exponential on `[x_min, ∞)`.
pub fn fit_exponential(tail: &TailSample) -> Result<ExponentialFit> {
    let n = tail.n_tail() as f64;
    let excess: f64 = tail.values.iter().map(|&x| x - tail.x_min).sum();
    if !(excess > 0.0) {
        return Err(Error::DegenerateSample(
            "tail mean equals x_min; the exponential rate is unbounded".into(),
        ));
    }
    let lambda = n / excess;
    Ok(ExponentialFit {
        lambda,
        x_min: tail.x_min,
        log_likelihood: n * lambda.ln() - lambda * excess,
    })
}

/// Log-normal fit from the moments of `ln x` (truncation at `x_min` is not
/// corrected for in the parameters).
pub fn fit_lognormal(tail: &TailSample) -> Result<LogNormalFit> {
    let n = tail.n_tail() as f64;
    let logs: Vec<f64> = tail.values.iter().map(|x| x.ln()).collect();
    let mu = logs.iter().sum::<f64>() / n;
    let var = logs.iter().map(|l| (l - mu) * (l - mu)).sum::<f64>() / n;
    let sigma = var.sqrt();
    if !(sigma > 0.0) {
        return Err(Error::DegenerateSample("log-values have zero spread".into()));
    }
    let mut fit = LogNormalFit {
        mu,
        sigma,
        x_min: tail.x_min,
        log_likelihood: 0.0,
    };
    fit.log_likelihood = fit.log_likelihood(&tail.values);
    Ok(fit)
}

/// Log-likelihood ratio of the power law against `alt` on the same tail,
/// with a two-sided normalized-ratio significance test.
pub fn loglik_ratio(
    tail: &TailSample,
    pl: &PowerLawFit,
    alt: &dyn TailModel,
    significance: f64,
) -> Result<ComparisonResult> {
    if pl.x_min != tail.x_min || alt.x_min() != tail.x_min {
        return Err(Error::InvalidInput(format!(
            "models must share the tail's x_min {} (power law {}, alternative {})",
            tail.x_min,
            pl.x_min,
            alt.x_min()
        )));
    }
    let diffs: Vec<f64> = tail.values.iter().map(|&x| pl.ln_pdf(x) - alt.ln_pdf(x)).collect();
    let n = diffs.len() as f64;
    let r: f64 = diffs.iter().sum();
    let mean = r / n;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
    let sigma = var.sqrt();
    if !(sigma > 0.0) || !r.is_finite() {
        return Ok(ComparisonResult {
            r,
            normalized_r: 0.0,
            p_value: 1.0,
            winner: Winner::Undecided,
        });
    }
    let normalized_r = r / (sigma * n.sqrt());
    let p_value = erfc(normalized_r.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0);
    Ok(ComparisonResult {
        r,
        normalized_r,
        p_value,
        winner: classify(r, p_value, significance),
    })
}

pub(crate) fn classify(r: f64, p_value: f64, significance: f64) -> Winner {
    if p_value < significance && r > 0.0 {
        Winner::PowerLaw
    } else if p_value < significance && r < 0.0 {
        Winner::Alternative
    } else {
        Winner::Undecided
    }
}

/// Semi-parametric bootstrap p-value for the fitted power law.
///
/// Each replicate has as many points as `spectrum`; with probability
/// `n_tail / n` a point is drawn from the fitted power law, otherwise it is
/// resampled from the eigenvalues below `x_min`. The replicate is refitted
/// with the full x_min scan and its KS distance compared against the
/// observed one. Replicate `k` uses stream `(seed, k)`, so the result does
/// not depend on thread count.
pub fn bootstrap_pvalue(
    spectrum: &Spectrum,
    fit: &PowerLawFit,
    n_bootstrap: usize,
    seed: u64,
    min_tail: usize,
) -> Result<GoodnessOfFit> {
    if n_bootstrap < MIN_BOOTSTRAP {
        return Err(Error::InvalidConfig(format!(
            "need at least {MIN_BOOTSTRAP} bootstrap replicates, got {n_bootstrap}"
        )));
    }
    check_exponent(fit.alpha)?;
    let ev = spectrum.eigenvalues();
    let body_len = ev.partition_point(|&v| v < fit.x_min);
    let body = &ev[..body_len];
    let n = ev.len();
    let tail_prob = (n - body_len) as f64 / n as f64;
    let root = StreamRng::new(seed);

    let distances: Vec<f64> = (0..n_bootstrap)
        .into_par_iter()
        .map(|rep| {
            let mut rng = root.substream(rep as u64);
            let mut sample: Vec<f64> = (0..n)
                .map(|_| {
                    if body.is_empty() || rng.next_f64() < tail_prob {
                        pl_quantile(rng.next_f64(), fit.alpha, fit.x_min)
                    } else {
                        body[rng.next_index(body.len())]
                    }
                })
                .collect();
            sample.sort_by(f64::total_cmp);
            let start = sample.partition_point(|&v| v <= 0.0);
            select_xmin_sorted(&sample[start..], min_tail).map(|f| f.ks_d)
        })
        .collect::<Result<_>>()?;

    let exceed = distances.iter().filter(|&&d| d >= fit.ks_d).count();
    Ok(GoodnessOfFit {
        p_value: exceed as f64 / n_bootstrap as f64,
        n_bootstrap,
        observed_d: fit.ks_d,
    })
}
