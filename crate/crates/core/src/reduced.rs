//! The planar log-scale diffusion `(K, H)` in intrinsic time `τ`.
//!
//! `K = ½ log V²`, `H = ½ log U²`, and the coupling time in real time is
//! `¼∫exp(2H − 2K)dτ`. Starting from `K₀ = H₀ = −ln W₀` puts the real-time
//! scale factor `(V₀/U₀)²` into the start, so the accumulated functional is
//! already the scaled coupling time.

use std::f64::consts::FRAC_1_SQRT_2;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::controls::{StrategyMode, StrategyParams};
use crate::dufresne::TailCutoff;
use crate::error::{CouplingError, Result};

const PSD_TOLERANCE: f64 = 1e-12;

/// Drifts and (co)variances of `(K, H)` per unit `τ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarCoefficients {
    pub var_k: f64,
    pub var_h: f64,
    pub cov_kh: f64,
    pub drift_k: f64,
    pub drift_h: f64,
}

impl PlanarCoefficients {
    pub fn is_psd(&self) -> bool {
        let scale = self.var_k.abs().max(self.var_h.abs()).max(1.0);
        self.var_k >= -PSD_TOLERANCE * scale
            && self.var_h >= -PSD_TOLERANCE * scale
            && self.var_k * self.var_h - self.cov_kh * self.cov_kh >= -PSD_TOLERANCE * scale * scale
    }

    /// Lower Cholesky factor `(l11, l21, l22)` of the covariance.
    pub fn cholesky(&self) -> Result<(f64, f64, f64)> {
        if !self.is_psd() {
            return Err(CouplingError::NotPsd {
                min_eigenvalue: self.min_eigenvalue(),
            });
        }
        let l11 = self.var_k.max(0.0).sqrt();
        let l21 = if l11 > 0.0 { self.cov_kh / l11 } else { 0.0 };
        let l22 = (self.var_h - l21 * l21).max(0.0).sqrt();
        Ok((l11, l21, l22))
    }

    fn min_eigenvalue(&self) -> f64 {
        let mean = 0.5 * (self.var_k + self.var_h);
        let half_gap = (0.25 * (self.var_k - self.var_h).powi(2) + self.cov_kh * self.cov_kh).sqrt();
        mean - half_gap
    }

    /// Drift of `2(H − K)` per `τ`.
    pub fn exponent_drift(&self) -> f64 {
        2.0 * (self.drift_h - self.drift_k)
    }

    /// Variance of `2(H − K)` per `τ`.
    pub fn exponent_variance(&self) -> f64 {
        4.0 * (self.var_h + self.var_k - 2.0 * self.cov_kh)
    }

    /// Drift of `log W = H − 2K` per `τ`.
    pub fn log_w_drift(&self) -> f64 {
        self.drift_h - 2.0 * self.drift_k
    }
}

/// Coefficients of the planar mixed control with reflection weight `p` and
/// rotation angle `θ` at ratio `W`.
pub fn coefficients_planar(w: f64, p: f64, theta: f64) -> PlanarCoefficients {
    let q = 1.0 - p;
    let (sin, cos) = theta.sin_cos();
    let versine = 1.0 - cos;
    let w_sq = w * w;
    PlanarCoefficients {
        var_k: w_sq * (p + 0.5 * q * versine),
        var_h: 2.0 - q * versine,
        cov_kh: FRAC_1_SQRT_2 * q * sin * w,
        drift_k: -0.5 * p * w_sq,
        drift_h: -FRAC_1_SQRT_2 * q * sin * w - (1.0 - 0.5 * q * versine),
    }
}

fn check_positive_w(w: f64) -> Result<()> {
    if !(w > 0.0) {
        return Err(CouplingError::OutOfRange {
            name: "W",
            value: w,
            constraint: "W > 0",
        });
    }
    Ok(())
}

/// `(dK)² = min{W², α²}`, `dK` drift `−½min{W², α²}`, `dK·dH = 0`,
/// `(dH)² = 2`, `dH` drift `−1`.
pub fn coefficients_reflection_synchronous(alpha_sq: f64, w: f64) -> Result<PlanarCoefficients> {
    check_positive_w(w)?;
    if !(alpha_sq > 0.0) {
        return Err(CouplingError::OutOfRange {
            name: "alpha_sq",
            value: alpha_sq,
            constraint: "alpha_sq > 0",
        });
    }
    let m = (w * w).min(alpha_sq);
    Ok(PlanarCoefficients {
        var_k: m,
        var_h: 2.0,
        cov_kh: 0.0,
        drift_k: -0.5 * m,
        drift_h: -1.0,
    })
}

/// Exact planar coefficients with `p = min{1, α²/W²}` and
/// `sin θ = min{1, √2β/W}`.
pub fn coefficients_rotation_mixture(alpha_sq: f64, beta: f64, w: f64) -> Result<PlanarCoefficients> {
    check_positive_w(w)?;
    if !(alpha_sq >= 0.0) || !(beta >= 0.0) {
        return Err(CouplingError::OutOfRange {
            name: "beta",
            value: beta,
            constraint: "alpha_sq >= 0 and beta >= 0",
        });
    }
    Ok(rotation_unchecked(alpha_sq, beta, w))
}

fn rotation_unchecked(alpha_sq: f64, beta: f64, w: f64) -> PlanarCoefficients {
    let p = (alpha_sq / (w * w)).min(1.0);
    let sin = (std::f64::consts::SQRT_2 * beta / w).min(1.0);
    let q = 1.0 - p;
    let cos = (1.0 - sin * sin).sqrt();
    // 1 − cos θ written to avoid cancellation for small θ.
    let versine = sin * sin / (1.0 + cos);
    let w_sq = w * w;
    PlanarCoefficients {
        var_k: w_sq * (p + 0.5 * q * versine),
        var_h: 2.0 - q * versine,
        cov_kh: FRAC_1_SQRT_2 * q * sin * w,
        drift_k: -0.5 * p * w_sq,
        drift_h: -FRAC_1_SQRT_2 * q * sin * w - (1.0 - 0.5 * q * versine),
    }
}

/// `W → ∞` limit of [`coefficients_rotation_mixture`].
pub fn coefficients_rotation_limit(alpha_sq: f64, beta: f64) -> PlanarCoefficients {
    PlanarCoefficients {
        var_k: alpha_sq + 0.5 * beta * beta,
        var_h: 2.0,
        cov_kh: beta,
        drift_k: -0.5 * alpha_sq,
        drift_h: -(beta + 1.0),
    }
}

/// Coefficients for any strategy mode at ratio `W`.
pub fn coefficients_for(params: &StrategyParams, w: f64) -> Result<PlanarCoefficients> {
    match params.mode {
        StrategyMode::ReflectionSynchronous => coefficients_reflection_synchronous(params.alpha_sq, w),
        StrategyMode::ReflectionRotation => coefficients_rotation_mixture(params.alpha_sq, params.beta, w),
        StrategyMode::PureReflection => {
            check_positive_w(w)?;
            Ok(coefficients_planar(w, 1.0, 0.0))
        }
    }
}

/// `(K, H)`, intrinsic time, and the running functional `¼∫exp(2H − 2K)dτ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducedState {
    pub k: f64,
    pub h: f64,
    pub tau: f64,
    pub t_accum: f64,
}

impl ReducedState {
    pub fn new(k: f64, h: f64) -> Self {
        ReducedState {
            k,
            h,
            tau: 0.0,
            t_accum: 0.0,
        }
    }

    /// `K₀ = H₀ = −ln W₀`, so that `2H₀ − 2K₀ = 0` and `W = W₀`.
    pub fn centered(w0: f64) -> Self {
        let l = -w0.ln();
        ReducedState::new(l, l)
    }

    pub fn w(&self) -> f64 {
        self.log_w().exp()
    }

    pub fn log_w(&self) -> f64 {
        self.h - 2.0 * self.k
    }
}

/// One Euler step with given noise; the functional uses the pre-step state.
pub fn step_reduced(
    state: &ReducedState,
    coeffs: &PlanarCoefficients,
    dtau: f64,
    noise: [f64; 2],
) -> Result<ReducedState> {
    if !(dtau > 0.0) {
        return Err(CouplingError::OutOfRange {
            name: "dtau",
            value: dtau,
            constraint: "dtau > 0",
        });
    }
    let (l11, l21, l22) = coeffs.cholesky()?;
    let h = dtau.sqrt();
    Ok(ReducedState {
        k: state.k + coeffs.drift_k * dtau + h * l11 * noise[0],
        h: state.h + coeffs.drift_h * dtau + h * (l21 * noise[0] + l22 * noise[1]),
        tau: state.tau + dtau,
        t_accum: state.t_accum + 0.25 * (2.0 * (state.h - state.k)).exp() * dtau,
    })
}

/// Settings for one reduced-engine replica.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducedRunConfig {
    pub strategy: StrategyParams,
    pub w0: f64,
    pub dtau: f64,
    pub tau_horizon: f64,
    /// Level of `W` whose crossing clears `absorbed`; `None` uses
    /// [`StrategyParams::regime_boundary`].
    pub switch_level: Option<f64>,
    pub cutoff: TailCutoff,
    /// Steps between tail-cutoff checks.
    pub check_every: u32,
}

impl ReducedRunConfig {
    pub fn new(strategy: StrategyParams, w0: f64, dtau: f64, tau_horizon: f64) -> Self {
        ReducedRunConfig {
            strategy,
            w0,
            dtau,
            tau_horizon,
            switch_level: None,
            cutoff: TailCutoff::default(),
            check_every: 256,
        }
    }

    pub fn switch_level(&self) -> f64 {
        self.switch_level.unwrap_or_else(|| self.strategy.regime_boundary())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w0 > 0.0) || !self.w0.is_finite() {
            return Err(CouplingError::OutOfRange {
                name: "W0",
                value: self.w0,
                constraint: "0 < W0 < inf",
            });
        }
        if !(self.dtau >= 0.0) || !self.dtau.is_finite() {
            return Err(CouplingError::OutOfRange {
                name: "dtau",
                value: self.dtau,
                constraint: "dtau >= 0",
            });
        }
        if !(self.tau_horizon >= 0.0) {
            return Err(CouplingError::OutOfRange {
                name: "tau_horizon",
                value: self.tau_horizon,
                constraint: "tau_horizon >= 0",
            });
        }
        if !(self.cutoff.tol > 0.0) || !(self.cutoff.delta > 0.0 && self.cutoff.delta < 1.0) {
            return Err(CouplingError::OutOfRange {
                name: "cutoff",
                value: self.cutoff.tol,
                constraint: "tol > 0 and 0 < delta < 1",
            });
        }
        if self.check_every == 0 {
            return Err(CouplingError::OutOfRange {
                name: "check_every",
                value: 0.0,
                constraint: "check_every >= 1",
            });
        }
        Ok(())
    }
}

/// One replica's scaled coupling time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducedOutcome {
    /// `(V₀/U₀)²·T_coupling`; may overflow to `inf` where `log_scaled_t`
    /// does not.
    pub scaled_t: f64,
    pub log_scaled_t: f64,
    /// `W` never fell below the switch level.
    pub absorbed: bool,
    /// The horizon was reached before the tail cutoff.
    pub truncated: bool,
    pub tau_end: f64,
    pub steps: u64,
    /// The exponent became non-finite.
    pub aborted: bool,
}

/// Running `Σ e^{x_i}` stored as `scaled·e^{offset}`.
#[derive(Debug, Clone, Copy)]
struct LogSum {
    offset: f64,
    scaled: f64,
}

impl LogSum {
    fn new() -> Self {
        LogSum {
            offset: 0.0,
            scaled: 0.0,
        }
    }

    fn add_exp(&mut self, x: f64) {
        let d = x - self.offset;
        if d > 600.0 {
            self.scaled = self.scaled * (-d).exp() + 1.0;
            self.offset = x;
        } else {
            self.scaled += d.exp();
        }
    }

    fn ln(&self) -> f64 {
        self.offset + self.scaled.ln()
    }
}

/// Simulates one replica with normals from `rng`.
pub fn simulate_scaled_coupling_time<R: Rng + ?Sized>(
    config: &ReducedRunConfig,
    rng: &mut R,
) -> Result<ReducedOutcome> {
    simulate_with_noise(config, || [rng.sample(StandardNormal), rng.sample(StandardNormal)])
}

/// Simulates one replica taking each step's pair of normals from `noise`.
///
/// The functional is integrated until the tail cutoff, using the current
/// coefficients as the local law of the remainder, or until `tau_horizon`.
pub fn simulate_with_noise<F: FnMut() -> [f64; 2]>(config: &ReducedRunConfig, mut noise: F) -> Result<ReducedOutcome> {
    config.validate()?;
    let params = config.strategy;
    let ln_level = config.switch_level().ln();
    let mut state = ReducedState::centered(config.w0);
    let dtau = config.dtau;
    if dtau == 0.0 || config.tau_horizon == 0.0 {
        return Ok(ReducedOutcome {
            scaled_t: 0.0,
            log_scaled_t: f64::NEG_INFINITY,
            absorbed: true,
            truncated: false,
            tau_end: 0.0,
            steps: 0,
            aborted: false,
        });
    }
    let sqrt_dtau = dtau.sqrt();
    let ln_quarter_dtau = (0.25 * dtau).ln();
    let ln_tol = config.cutoff.tol.ln();
    let max_steps = (config.tau_horizon / dtau).ceil() as u64;
    let mut sum = LogSum::new();
    let mut absorbed = true;
    let mut cache: Option<(PlanarCoefficients, f64)> = None;
    let mut steps = 0u64;
    let mut truncated = true;
    let mut aborted = false;

    // Reflection-synchronous coefficients are constant for W > α.
    let constant_above = match params.mode {
        StrategyMode::ReflectionSynchronous => Some((
            coefficients_reflection_synchronous(params.alpha_sq.max(f64::MIN_POSITIVE), 1.0 + params.alpha_sq.sqrt())?,
            0.5 * params.alpha_sq.ln(),
        )),
        _ => None,
    };

    while steps < max_steps {
        let exponent = 2.0 * (state.h - state.k);
        sum.add_exp(exponent);
        let log_w = state.log_w();
        if log_w < ln_level {
            absorbed = false;
        }
        let coeffs = match constant_above {
            Some((c, ln_alpha)) if log_w > ln_alpha => c,
            _ => coefficients_for(&params, log_w.exp().max(f64::MIN_POSITIVE))?,
        };
        let (l11, l21, l22) = coeffs.cholesky()?;
        let z = noise();
        state.k += coeffs.drift_k * dtau + sqrt_dtau * l11 * z[0];
        state.h += coeffs.drift_h * dtau + sqrt_dtau * (l21 * z[0] + l22 * z[1]);
        steps += 1;
        if !state.k.is_finite() || !state.h.is_finite() {
            aborted = true;
            truncated = false;
            break;
        }
        if steps.is_multiple_of(u64::from(config.check_every)) {
            let ln_factor = match cache {
                Some((c, f)) if c == coeffs => Some(f),
                _ => {
                    let f = config
                        .cutoff
                        .ln_remainder_factor(coeffs.exponent_variance(), -coeffs.exponent_drift());
                    if let Some(f) = f {
                        cache = Some((coeffs, f));
                    }
                    f
                }
            };
            if let Some(f) = ln_factor {
                let exponent = 2.0 * (state.h - state.k);
                // Compare ¼e^{x}·factor with tol·¼Σe^{x_i}dτ.
                if exponent + f < ln_tol + sum.ln() + dtau.ln() {
                    truncated = false;
                    break;
                }
            }
        }
    }
    let log_scaled_t = sum.ln() + ln_quarter_dtau;
    Ok(ReducedOutcome {
        scaled_t: log_scaled_t.exp(),
        log_scaled_t,
        absorbed,
        truncated,
        tau_end: steps as f64 * dtau,
        steps,
        aborted,
    })
}
