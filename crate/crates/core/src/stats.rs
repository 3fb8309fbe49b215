//! Goodness of fit, tail-index estimation and order statistics.

use crate::error::{CouplingError, Result};

/// Minimum sample size accepted by [`ks_statistic`].
pub const KS_MIN_SAMPLES: usize = 20;

/// Two-sided one-sample Kolmogorov–Smirnov statistic and asymptotic p-value.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<(f64, f64)> {
    if samples.len() < KS_MIN_SAMPLES {
        return Err(CouplingError::TooFewSamples {
            needed: KS_MIN_SAMPLES,
            got: samples.len(),
        });
    }
    if samples.iter().any(|x| x.is_nan()) {
        return Err(CouplingError::Numeric("NaN sample".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    Ok((d, kolmogorov_p_value(d, sorted.len())))
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    for s in [a, b] {
        if s.len() < KS_MIN_SAMPLES {
            return Err(CouplingError::TooFewSamples {
                needed: KS_MIN_SAMPLES,
                got: s.len(),
            });
        }
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let effective = (n * m) as f64 / (n + m) as f64;
    Ok((d, kolmogorov_q(d * (effective.sqrt() + 0.12 + 0.11 / effective.sqrt()))))
}

/// `P(D_n > d)` from the Kolmogorov limit with Stephens' small-sample
/// correction.
pub fn kolmogorov_p_value(d: f64, n: usize) -> f64 {
    let sqrt_n = (n as f64).sqrt();
    kolmogorov_q(d * (sqrt_n + 0.12 + 0.11 / sqrt_n))
}

/// `Q(λ) = 2 Σ_{k≥1} (−1)^{k−1} exp(−2k²λ²)`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-17 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// The `1 − level` critical value of `D` at sample size `n`: the `d` with
/// `kolmogorov_p_value(d, n) = level`.
pub fn ks_critical_value(n: usize, level: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if kolmogorov_p_value(mid, n) > level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Hill estimator of the upper-tail exponent together with `κ̂/√k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailIndex {
    pub kappa: f64,
    pub stderr: f64,
    pub k: usize,
}

/// Hill estimator over the top `k_fraction` of positive `samples`.
pub fn tail_index_estimate(samples: &[f64], k_fraction: f64) -> Result<TailIndex> {
    if let Some(&bad) = samples.iter().find(|&&x| !(x > 0.0)) {
        return Err(CouplingError::OutOfRange {
            name: "sample",
            value: bad,
            constraint: "samples must be > 0",
        });
    }
    let logs: Vec<f64> = samples.iter().map(|x| x.ln()).collect();
    tail_index_from_logs(&logs, k_fraction)
}

/// [`tail_index_estimate`] on `ln` of the samples.
///
/// `κ̂ = k / Σ_{i<k} (ℓ₍ᵢ₎ − ℓ₍ₖ₎)` with `ℓ₍₀₎ ≥ ℓ₍₁₎ ≥ …` the sorted logs.
pub fn tail_index_from_logs(logs: &[f64], k_fraction: f64) -> Result<TailIndex> {
    if !(k_fraction > 0.0 && k_fraction <= 0.5) {
        return Err(CouplingError::OutOfRange {
            name: "k_fraction",
            value: k_fraction,
            constraint: "0 < k_fraction <= 0.5",
        });
    }
    if logs.iter().any(|x| !x.is_finite()) {
        return Err(CouplingError::Numeric("non-finite log sample".into()));
    }
    let k = (k_fraction * logs.len() as f64).floor() as usize;
    if k < 2 {
        return Err(CouplingError::TooFewSamples {
            needed: (2.0 / k_fraction).ceil() as usize,
            got: logs.len(),
        });
    }
    let mut sorted = logs.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let threshold = sorted[k];
    let excess: f64 = sorted[..k].iter().map(|l| l - threshold).sum();
    if !(excess > 0.0) {
        return Err(CouplingError::Degenerate("no spread in the upper tail"));
    }
    let kappa = k as f64 / excess;
    Ok(TailIndex {
        kappa,
        stderr: kappa / (k as f64).sqrt(),
        k,
    })
}

/// Linear-interpolation quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() || !(0.0..=1.0).contains(&p) {
        return None;
    }
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

/// Quantiles at each of `ps`; `None` for empty input.
pub fn quantiles(samples: &[f64], ps: &[f64]) -> Option<Vec<f64>> {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    ps.iter().map(|&p| quantile_sorted(&sorted, p)).collect()
}

pub fn median(samples: &[f64]) -> Option<f64> {
    quantiles(samples, &[0.5]).map(|q| q[0])
}

/// Sample mean and its standard error.
pub fn mean_stderr(samples: &[f64]) -> Option<(f64, f64)> {
    if samples.len() < 2 {
        return None;
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, (var / n).sqrt()))
}
