//! Coupling controls: reflection, synchronous, rotation and their mixtures.
//!
//! A control `J` correlates the two Brownian differentials through
//! `dA = Jᵀ dB + J̃ᵀ dC`; every constructor here returns a matrix with
//! `JᵀJ ≤ I` by construction when its parameter preconditions hold.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CouplingError, Result};
use crate::geometry::{decompose_control, planar_rotation, ControlMatrix, Matrix, SkewUnitMatrix, UnitVector};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const THETA_SQ_MAX: f64 = 2.0;
const THETA_SLACK: f64 = 1e-12;

/// Which mixture of couplings the adaptive rule emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyMode {
    /// Reflection with weight `p`, synchronous coupling otherwise.
    ReflectionSynchronous,
    /// Reflection with weight `p`, rotation coupling otherwise.
    ReflectionRotation,
    /// Reflection only.
    PureReflection,
}

impl StrategyMode {
    pub const ALL: [StrategyMode; 3] = [
        StrategyMode::ReflectionSynchronous,
        StrategyMode::ReflectionRotation,
        StrategyMode::PureReflection,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyMode::ReflectionSynchronous => "reflection-synchronous",
            StrategyMode::ReflectionRotation => "reflection-rotation",
            StrategyMode::PureReflection => "pure-reflection",
        }
    }
}

impl fmt::Display for StrategyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyMode {
    type Err = CouplingError;

    fn from_str(s: &str) -> Result<Self> {
        StrategyMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| CouplingError::config("mode", format!("unknown strategy mode `{s}`")))
    }
}

/// Scales `α²` (reflection weight) and `β` (rotation angle) of a strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyParams {
    pub alpha_sq: f64,
    pub beta: f64,
    pub mode: StrategyMode,
}

impl StrategyParams {
    pub fn new(alpha_sq: f64, beta: f64, mode: StrategyMode) -> Result<Self> {
        if !(alpha_sq >= 0.0) || !alpha_sq.is_finite() {
            return Err(CouplingError::OutOfRange {
                name: "alpha_sq",
                value: alpha_sq,
                constraint: "alpha_sq >= 0",
            });
        }
        if !beta.is_finite() || (mode == StrategyMode::ReflectionRotation && beta < 0.0) {
            return Err(CouplingError::OutOfRange {
                name: "beta",
                value: beta,
                constraint: "beta >= 0 in reflection-rotation mode",
            });
        }
        Ok(StrategyParams { alpha_sq, beta, mode })
    }

    pub fn reflection_synchronous(alpha_sq: f64) -> Result<Self> {
        Self::new(alpha_sq, 0.0, StrategyMode::ReflectionSynchronous)
    }

    pub fn reflection_rotation(alpha_sq: f64, beta: f64) -> Result<Self> {
        Self::new(alpha_sq, beta, StrategyMode::ReflectionRotation)
    }

    pub fn pure_reflection() -> Self {
        StrategyParams {
            alpha_sq: 0.0,
            beta: 0.0,
            mode: StrategyMode::PureReflection,
        }
    }

    /// Smallest `W` for which the adaptive rule needs no clamping.
    pub fn regime_boundary(&self) -> f64 {
        match self.mode {
            StrategyMode::ReflectionSynchronous => self.alpha_sq.sqrt(),
            StrategyMode::ReflectionRotation => self.alpha_sq.sqrt().max(SQRT_2 * self.beta),
            StrategyMode::PureReflection => 0.0,
        }
    }
}

/// Which closed form the rotation part takes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlFamily {
    /// `n = 2`: exact rotation `exp(−√2θZ)`, `sin θ = √2β/W`.
    Planar,
    /// Any `n`: quadratic truncation `I − θZ − θ²ZᵀZ`, `θ = β/W`.
    General,
}

impl ControlFamily {
    pub fn for_dimension(n: usize) -> Self {
        if n == 2 {
            ControlFamily::Planar
        } else {
            ControlFamily::General
        }
    }
}

/// The reflection proportion `p` and rotation angle `θ` chosen at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveControlDecision {
    pub p: f64,
    pub theta: f64,
}

impl AdaptiveControlDecision {
    pub fn new(p: f64, theta: f64) -> Result<Self> {
        check_p(p)?;
        if !theta.is_finite() {
            return Err(CouplingError::OutOfRange {
                name: "theta",
                value: theta,
                constraint: "finite",
            });
        }
        Ok(AdaptiveControlDecision { p, theta })
    }

    pub fn reflection() -> Self {
        AdaptiveControlDecision { p: 1.0, theta: 0.0 }
    }

    pub fn synchronous() -> Self {
        AdaptiveControlDecision { p: 0.0, theta: 0.0 }
    }

    pub fn q(&self) -> f64 {
        1.0 - self.p
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(CouplingError::OutOfRange {
            name: "p",
            value: p,
            constraint: "0 <= p <= 1",
        });
    }
    Ok(())
}

fn check_theta_sq(theta: f64) -> Result<()> {
    if !(theta * theta <= THETA_SQ_MAX + THETA_SLACK) {
        return Err(CouplingError::OutOfRange {
            name: "theta",
            value: theta,
            constraint: "theta^2 <= 2",
        });
    }
    Ok(())
}

fn check_same_dim(nu: &UnitVector, z: &SkewUnitMatrix) -> Result<()> {
    if nu.dim() != z.dim() {
        return Err(CouplingError::Dimension {
            expected: format!("{}", nu.dim()),
            found: format!("{}", z.dim()),
        });
    }
    Ok(())
}

/// `J = I − 2ννᵀ`.
pub fn reflection_control(nu: &UnitVector) -> ControlMatrix {
    let n = nu.dim();
    let j = Matrix::identity(n, n) - nu.projector() * 2.0;
    decompose_control(j).expect("square by construction")
}

/// `J″ = I − θZ − θ²ZᵀZ`, valid for `θ² ≤ 2`.
pub fn quadratic_rotation_control(z: &SkewUnitMatrix, theta: f64) -> Result<ControlMatrix> {
    check_theta_sq(theta)?;
    let n = z.dim();
    let j = Matrix::identity(n, n) - z.as_matrix() * theta - z.gram() * (theta * theta);
    decompose_control(j)
}

/// `J = I − 2pννᵀ − (1−p)θZ − (1−p)θ²ZᵀZ`.
pub fn mixed_nd_control(
    nu: &UnitVector,
    z: &SkewUnitMatrix,
    decision: AdaptiveControlDecision,
) -> Result<ControlMatrix> {
    check_same_dim(nu, z)?;
    check_p(decision.p)?;
    check_theta_sq(decision.theta)?;
    let n = nu.dim();
    let (p, q, theta) = (decision.p, decision.q(), decision.theta);
    let j = Matrix::identity(n, n)
        - nu.projector() * (2.0 * p)
        - z.as_matrix() * (q * theta)
        - z.gram() * (q * theta * theta);
    decompose_control(j)
}

/// `J = p(I − 2ννᵀ) + q·exp(−√2θZ)` in the plane.
pub fn planar_mixed_control(
    nu: &UnitVector,
    z: &SkewUnitMatrix,
    decision: AdaptiveControlDecision,
) -> Result<ControlMatrix> {
    if nu.dim() != 2 || z.dim() != 2 {
        return Err(CouplingError::Dimension {
            expected: "2".into(),
            found: format!("{}", nu.dim().max(z.dim())),
        });
    }
    check_p(decision.p)?;
    let (p, q) = (decision.p, decision.q());
    let reflection = Matrix::identity(2, 2) - nu.projector() * 2.0;
    let j = reflection * p + planar_rotation(z, decision.theta)? * q;
    decompose_control(j)
}

/// Second closed form `I − 2pννᵀ − q(1−cosθ)I − √2 q sinθ Z` of the planar control.
pub fn planar_mixed_control_expanded(nu: &UnitVector, z: &SkewUnitMatrix, decision: AdaptiveControlDecision) -> Matrix {
    let (p, q, theta) = (decision.p, decision.q(), decision.theta);
    Matrix::identity(2, 2) * (1.0 - q * (1.0 - theta.cos()))
        - nu.projector() * (2.0 * p)
        - z.as_matrix() * (SQRT_2 * q * theta.sin())
}

/// Chooses `(p, θ)` from the current ratio `W = U/V²`.
///
/// `p = min{1, α²/W²}` in both mixture modes. The planar rotation angle is
/// `arcsin(min{1, √2β/W})`; the general one is `min{√2, β/W}`.
pub fn adapt_parameters(w: f64, params: &StrategyParams, family: ControlFamily) -> Result<AdaptiveControlDecision> {
    if !(w > 0.0) {
        return Err(CouplingError::OutOfRange {
            name: "W",
            value: w,
            constraint: "W > 0",
        });
    }
    let p = if w.is_infinite() {
        0.0
    } else {
        (params.alpha_sq / (w * w)).min(1.0)
    };
    let theta = match params.mode {
        StrategyMode::PureReflection => return Ok(AdaptiveControlDecision::reflection()),
        StrategyMode::ReflectionSynchronous => 0.0,
        StrategyMode::ReflectionRotation => match family {
            ControlFamily::Planar => (SQRT_2 * params.beta / w).min(1.0).asin(),
            ControlFamily::General => (params.beta / w).min(SQRT_2),
        },
    };
    Ok(AdaptiveControlDecision { p, theta })
}
