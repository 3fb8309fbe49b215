//! Euler–Maruyama simulation of a co-adaptively coupled pair `(A, B)` of
//! `n`-dimensional Brownian motions together with their stochastic areas.
//!
//! Two representations are provided. [`FullState`] stores both paths and both
//! area integrals, exactly as defined. [`RelativeState`] stores only the
//! separation `X = A − B` and the areal difference `𝔄`, which is all the
//! controls depend on. The two are updated by algebraically identical
//! formulas, but the relative form does not lose precision when `X` is many
//! orders of magnitude smaller than `A` and `B`; the coupling runner uses it.

use std::ops::ControlFlow;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::controls::{
    adapt_parameters, mixed_nd_control, planar_mixed_control, AdaptiveControlDecision, ControlFamily, StrategyParams,
};
use crate::error::{CouplingError, Result};
use crate::geometry::{
    normalize_area, sqrt_psd_with_floor, symmetrize, validate_control, AreaNorm, ControlMatrix, Matrix, SkewUnitMatrix,
    UnitVector, Vector, CONTROL_TOLERANCE,
};

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Both coupled paths, their running stochastic areas, and process time.
#[derive(Debug, Clone, PartialEq)]
pub struct FullState {
    pub a: Vector,
    pub b: Vector,
    /// `∫(A_i dA_j − A_j dA_i)`.
    pub area_a: Matrix,
    /// `∫(B_i dB_j − B_j dB_i)`.
    pub area_b: Matrix,
    pub t: f64,
}

impl FullState {
    /// Paths started at `a` and `b` with zero areas.
    pub fn new(a: Vector, b: Vector) -> Result<Self> {
        if a.len() != b.len() {
            return Err(CouplingError::Dimension {
                expected: format!("{}", a.len()),
                found: format!("{}", b.len()),
            });
        }
        let n = a.len();
        Ok(FullState {
            a,
            b,
            area_a: Matrix::zeros(n, n),
            area_b: Matrix::zeros(n, n),
            t: 0.0,
        })
    }

    /// `A = x0`, `B = 0`, with `area_a` preloaded so that the areal
    /// difference starts at `area0`.
    pub fn from_separation(x0: Vector, area0: &Matrix) -> Result<Self> {
        let n = x0.len();
        check_skew_shape(area0, n)?;
        let mut state = FullState::new(x0, Vector::zeros(n))?;
        state.area_a = mirrored(area0);
        Ok(state)
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    pub fn separation(&self) -> Vector {
        &self.a - &self.b
    }
}

fn check_skew_shape(m: &Matrix, n: usize) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(CouplingError::Dimension {
            expected: format!("{n}x{n}"),
            found: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    normalize_area(m).map(|_| ())
}

/// Copies the strict upper triangle of `m` and mirrors it with opposite sign.
fn mirrored(m: &Matrix) -> Matrix {
    let n = m.nrows();
    let mut out = Matrix::zeros(n, n);
    for r in 0..n {
        for c in (r + 1)..n {
            out[(r, c)] = m[(r, c)];
            out[(c, r)] = -m[(r, c)];
        }
    }
    out
}

/// Adds `u vᵀ − v uᵀ` to the skew matrix `m`, keeping it exactly skew.
fn add_wedge(m: &mut Matrix, u: &Vector, v: &Vector) {
    let n = m.nrows();
    for r in 0..n {
        for c in (r + 1)..n {
            let w = u[r] * v[c] - u[c] * v[r];
            m[(r, c)] += w;
            m[(c, r)] = -m[(r, c)];
        }
    }
}

/// Eigenvalues of `I − JᵀJ` this small, relative to its scale, are
/// round-off from an orthogonal `J`.
const COMPLEMENT_FLOOR: f64 = 1e-13;

/// A control together with the square root `J̃ = (I − JᵀJ)^{1/2}` that
/// supplies the independent noise.
///
/// The deviation `E = J − I` is stored separately. When `J` is within
/// `1e-16` of the identity (small reflection weight at large `W`) forming
/// `JᵀΔB − ΔB` or `I − JᵀJ` from `J` would cancel the whole signal, so the
/// adaptive runner builds `E` and `J̃` from closed forms instead.
#[derive(Debug, Clone)]
pub struct RealizedControl {
    control: ControlMatrix,
    deviation: Matrix,
    complement: Matrix,
}

impl RealizedControl {
    pub fn new(control: ControlMatrix) -> Result<Self> {
        if !validate_control(&control, CONTROL_TOLERANCE)? {
            return Err(CouplingError::InvalidControl {
                max_eigenvalue: crate::geometry::max_gram_eigenvalue(&control)?,
            });
        }
        let n = control.dim();
        let deviation = control.j() - Matrix::identity(n, n);
        // I − JᵀJ = −(E + Eᵀ + EᵀE)
        let gap = -(&deviation + deviation.transpose() + deviation.tr_mul(&deviation));
        let complement = sqrt_psd_with_floor(&symmetrize(&gap), COMPLEMENT_FLOOR)?;
        Ok(RealizedControl {
            control,
            deviation,
            complement,
        })
    }

    /// The control for decision `d` in the frame `(ν, Z)`, with `E` and `J̃`
    /// evaluated without subtracting the identity.
    pub fn from_decision(
        nu: &UnitVector,
        z: &SkewUnitMatrix,
        decision: AdaptiveControlDecision,
        family: ControlFamily,
    ) -> Result<Self> {
        let (p, q, theta) = (decision.p, decision.q(), decision.theta);
        let proj = nu.projector();
        let zm = z.as_matrix();
        match family {
            ControlFamily::Planar => {
                let control = planar_mixed_control(nu, z, decision)?;
                let (s, vers) = (theta.sin(), 2.0 * (0.5 * theta).sin().powi(2));
                let deviation = -(&proj * (2.0 * p)) - Matrix::identity(2, 2) * (q * vers) - zm * (SQRT_2 * q * s);
                // I − JᵀJ = pq·MᵀM with M = reflection − rotation, and in the
                // plane MᵀM is 4× a projector, so its root is MᵀM/2.
                let m = Matrix::identity(2, 2) * vers - &proj * 2.0 + zm * (SQRT_2 * s);
                let complement = m.tr_mul(&m) * (0.5 * (p * q).sqrt());
                Ok(RealizedControl {
                    control,
                    deviation,
                    complement,
                })
            }
            ControlFamily::General => {
                let control = mixed_nd_control(nu, z, decision)?;
                let gram_z = z.gram();
                let deviation = -(&proj * (2.0 * p)) - zm * (q * theta) - &gram_z * (q * theta * theta);
                // With D = 2pP + qθ²N and N = ZᵀZ:
                // I − JᵀJ = 2D − D² − q²θ²N + qθ(ZD − DZ).
                let d = &proj * (2.0 * p) + &gram_z * (q * theta * theta);
                let gap = &d * 2.0 - &d * &d - &gram_z * (q * q * theta * theta) + (zm * &d - &d * zm) * (q * theta);
                let scale = 4.0 * p + 2.0 * q * theta * theta;
                let complement = sqrt_psd_with_floor(&symmetrize(&gap), COMPLEMENT_FLOOR * scale)?;
                Ok(RealizedControl {
                    control,
                    deviation,
                    complement,
                })
            }
        }
    }

    pub fn control(&self) -> &ControlMatrix {
        &self.control
    }

    /// `J − I`.
    pub fn deviation(&self) -> &Matrix {
        &self.deviation
    }

    /// `J̃`.
    pub fn complement(&self) -> &Matrix {
        &self.complement
    }

    /// `(ΔX, ΔB)` with `ΔB = √dt·ξ` and `ΔX = ΔA − ΔB = EᵀΔB + J̃ᵀ√dt·ζ`,
    /// where `noise = (ξ, ζ)`.
    pub fn relative_increments(&self, dt: f64, noise: &[f64]) -> Result<(Vector, Vector)> {
        let n = self.control.dim();
        if noise.len() != 2 * n {
            return Err(CouplingError::Dimension {
                expected: format!("{} normals", 2 * n),
                found: format!("{}", noise.len()),
            });
        }
        let h = dt.sqrt();
        let db = Vector::from_iterator(n, noise[..n].iter().map(|z| z * h));
        let dc = Vector::from_iterator(n, noise[n..].iter().map(|z| z * h));
        let dx = self.deviation.tr_mul(&db) + self.complement.tr_mul(&dc);
        Ok((dx, db))
    }

    /// `(ΔA, ΔB)` with `ΔA = JᵀΔB + J̃ᵀ√dt·ζ`.
    pub fn increments(&self, dt: f64, noise: &[f64]) -> Result<(Vector, Vector)> {
        let (dx, db) = self.relative_increments(dt, noise)?;
        Ok((&db + dx, db))
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(CouplingError::OutOfRange {
            name: "dt",
            value: dt,
            constraint: "dt > 0",
        });
    }
    Ok(())
}

/// One Euler step of the full state with left-point area sums.
pub fn step(state: &FullState, control: &ControlMatrix, dt: f64, noise: &[f64]) -> Result<FullState> {
    check_dt(dt)?;
    if control.dim() != state.dim() {
        return Err(CouplingError::Dimension {
            expected: format!("{}", state.dim()),
            found: format!("{}", control.dim()),
        });
    }
    let realized = RealizedControl::new(control.clone())?;
    let (da, db) = realized.increments(dt, noise)?;
    Ok(apply_increments(state, &da, &db, dt))
}

/// Advances the full state by given increments.
pub fn apply_increments(state: &FullState, da: &Vector, db: &Vector, dt: f64) -> FullState {
    let mut next = state.clone();
    add_wedge(&mut next.area_a, &state.a, da);
    add_wedge(&mut next.area_b, &state.b, db);
    next.a += da;
    next.b += db;
    next.t += dt;
    next
}

/// `𝔄_ij = areaA_ij − areaB_ij + A_iB_j − A_jB_i`.
pub fn areal_difference(state: &FullState) -> Matrix {
    let n = state.dim();
    let mut out = Matrix::zeros(n, n);
    for r in 0..n {
        for c in (r + 1)..n {
            let v = state.area_a[(r, c)] - state.area_b[(r, c)] + state.a[r] * state.b[c] - state.a[c] * state.b[r];
            out[(r, c)] = v;
            out[(c, r)] = -v;
        }
    }
    out
}

/// Distance and areal-distance summaries of a coupled state.
///
/// `k`, `h` and `w` are `None` exactly when the corresponding squared norm
/// is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    pub v_sq: f64,
    pub u_sq: f64,
    pub k: Option<f64>,
    pub h: Option<f64>,
    pub w: Option<f64>,
    pub tau: f64,
    pub tau_tilde: f64,
}

impl Diagnostics {
    pub fn from_norms(v_sq: f64, u_sq: f64, tau: f64, tau_tilde: f64) -> Self {
        let k = (v_sq > 0.0).then(|| 0.5 * v_sq.ln());
        let h = (u_sq > 0.0).then(|| 0.5 * u_sq.ln());
        let w = match (k, h) {
            (Some(_), Some(_)) => Some(u_sq.sqrt() / v_sq),
            _ => None,
        };
        Diagnostics {
            v_sq,
            u_sq,
            k,
            h,
            w,
            tau,
            tau_tilde,
        }
    }

    /// Both distances vanish.
    pub fn is_degenerate(&self) -> bool {
        self.k.is_none() || self.h.is_none()
    }
}

pub fn diagnostics(state: &FullState, tau: f64, tau_tilde: f64) -> Diagnostics {
    let x = state.separation();
    let area = areal_difference(state);
    Diagnostics::from_norms(x.norm_squared(), area.norm_squared(), tau, tau_tilde)
}

/// Separation `X = A − B`, areal difference `𝔄`, and process time.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeState {
    pub x: Vector,
    pub area: Matrix,
    pub t: f64,
}

impl RelativeState {
    pub fn new(x: Vector, area: &Matrix) -> Result<Self> {
        check_skew_shape(area, x.len())?;
        Ok(RelativeState {
            x,
            area: mirrored(area),
            t: 0.0,
        })
    }

    pub fn from_full(state: &FullState) -> Self {
        RelativeState {
            x: state.separation(),
            area: areal_difference(state),
            t: state.t,
        }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// Applies increments `(ΔA, ΔB)`.
    ///
    /// Uses `Δ𝔄 = X∧ΔY + ΔA∧ΔB` with `Y = A + B`, the exact discrete
    /// counterpart of the full-state left-point update.
    pub fn advance(&mut self, da: &Vector, db: &Vector, dt: f64) {
        self.advance_relative(&(da - db), db, dt);
    }

    /// Applies `(ΔX, ΔB)`; `ΔA∧ΔB = ΔX∧ΔB` since `ΔB∧ΔB = 0`.
    pub fn advance_relative(&mut self, dx: &Vector, db: &Vector, dt: f64) {
        let dy = dx + db * 2.0;
        add_wedge(&mut self.area, &self.x, &dy);
        add_wedge(&mut self.area, dx, db);
        self.x += dx;
        self.t += dt;
    }

    pub fn v_sq(&self) -> f64 {
        self.x.norm_squared()
    }

    pub fn u_sq(&self) -> f64 {
        self.area.norm_squared()
    }

    pub fn diagnostics(&self, tau: f64, tau_tilde: f64) -> Diagnostics {
        Diagnostics::from_norms(self.v_sq(), self.u_sq(), tau, tau_tilde)
    }
}

/// The unit skew generator the rotation part should use at areal difference
/// `area`: `−𝔄/U`, which makes the rotation drive `U` down.
pub fn control_generator(area: &Matrix) -> Result<Option<SkewUnitMatrix>> {
    Ok(match normalize_area(area)? {
        AreaNorm::Scaled { z, .. } => Some(z.negated()),
        AreaNorm::Degenerate => None,
    })
}

fn fallback_generator(n: usize) -> SkewUnitMatrix {
    let mut m = Matrix::zeros(n, n);
    m[(0, 1)] = 1.0;
    m[(1, 0)] = -1.0;
    SkewUnitMatrix::from_skew(&m).expect("nonzero")
}

/// The reflection direction `ν = X/V` and rotation generator at `(x, area)`,
/// with fixed fallbacks when either norm vanishes.
pub fn decision_frame(x: &Vector, area: &Matrix) -> Result<(UnitVector, SkewUnitMatrix)> {
    let n = x.len();
    let nu = UnitVector::new(x.clone()).unwrap_or_else(|_| UnitVector::basis(n, 0));
    let z = control_generator(area)?.unwrap_or_else(|| fallback_generator(n));
    Ok((nu, z))
}

/// Builds the control for decision `d` at the relative state `(x, area)`.
pub fn realize_decision(
    x: &Vector,
    area: &Matrix,
    decision: AdaptiveControlDecision,
    family: ControlFamily,
) -> Result<ControlMatrix> {
    let (nu, z) = decision_frame(x, area)?;
    match family {
        ControlFamily::Planar => planar_mixed_control(&nu, &z, decision),
        ControlFamily::General => mixed_nd_control(&nu, &z, decision),
    }
}

/// Settings for one coupling run.
#[derive(Debug, Clone, PartialEq)]
pub struct FullCouplingConfig {
    pub strategy: StrategyParams,
    pub initial: FullState,
    /// Largest allowed time step.
    pub dt_max: f64,
    /// Target increment of the intrinsic clocks per step.
    pub clock_step: f64,
    /// Coupling thresholds; `None` means `1e-3` of the initial distance.
    pub eps_v: Option<f64>,
    pub eps_u: Option<f64>,
    /// Below `switch_low` the run uses pure reflection until `W ≥ switch_high`.
    pub switch_low: f64,
    pub switch_high: f64,
    pub horizon: f64,
    pub max_steps: u64,
}

pub const DEFAULT_SWITCH_LOW: f64 = 10.0;
pub const DEFAULT_CLOCK_STEP: f64 = 2e-3;
pub const DEFAULT_THRESHOLD_FRACTION: f64 = 1e-3;

impl FullCouplingConfig {
    /// Starts at `X₀ = v0·e₁` and `𝔄₀ = w0·v0²·Z₀` where `Z₀` is the unit
    /// generator of the first coordinate plane.
    pub fn from_ratio(strategy: StrategyParams, n: usize, v0: f64, w0: f64) -> Result<Self> {
        if n < 2 {
            return Err(CouplingError::OutOfRange {
                name: "n",
                value: n as f64,
                constraint: "n >= 2",
            });
        }
        if !(v0 >= 0.0) || !(w0 >= 0.0) || !v0.is_finite() || !w0.is_finite() {
            return Err(CouplingError::OutOfRange {
                name: "v0",
                value: v0.min(w0),
                constraint: "v0 >= 0 and W0 >= 0",
            });
        }
        let mut x0 = Vector::zeros(n);
        x0[0] = v0;
        let u0 = w0 * v0 * v0;
        let area0 = fallback_generator(n).as_matrix() * u0;
        Ok(FullCouplingConfig {
            strategy,
            initial: FullState::from_separation(x0, &area0)?,
            dt_max: 1e-4,
            clock_step: DEFAULT_CLOCK_STEP,
            eps_v: None,
            eps_u: None,
            switch_low: DEFAULT_SWITCH_LOW,
            switch_high: 2.0 * DEFAULT_SWITCH_LOW,
            horizon: 1e4,
            max_steps: 10_000_000,
        })
    }

    pub fn dim(&self) -> usize {
        self.initial.dim()
    }

    /// Resolved `(ε_V, ε_U)`.
    pub fn thresholds(&self) -> (f64, f64) {
        let start = RelativeState::from_full(&self.initial);
        let v0 = start.v_sq().sqrt();
        let u0 = start.u_sq().sqrt();
        let scale_v = if v0 > 0.0 { v0 } else { u0.sqrt() };
        let scale_u = if u0 > 0.0 { u0 } else { v0 * v0 };
        (
            self.eps_v.unwrap_or(DEFAULT_THRESHOLD_FRACTION * scale_v),
            self.eps_u.unwrap_or(DEFAULT_THRESHOLD_FRACTION * scale_u),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt_max", self.dt_max),
            ("clock_step", self.clock_step),
            ("horizon", self.horizon),
        ];
        for (name, value) in positive {
            if !(value > 0.0) || value.is_nan() {
                return Err(CouplingError::OutOfRange {
                    name,
                    value,
                    constraint: "must be > 0",
                });
            }
        }
        if !(self.switch_low >= 0.0) || !(self.switch_high >= self.switch_low) {
            return Err(CouplingError::OutOfRange {
                name: "switch_high",
                value: self.switch_high,
                constraint: "0 <= switch_low <= switch_high",
            });
        }
        let (ev, eu) = self.thresholds();
        if !(ev >= 0.0) || !(eu >= 0.0) {
            return Err(CouplingError::OutOfRange {
                name: "eps",
                value: ev.min(eu),
                constraint: "thresholds must be >= 0",
            });
        }
        Ok(())
    }
}

/// How a coupling run ended.
#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Coupled,
    /// Process time reached the horizon first.
    Horizon,
    /// The step budget ran out first.
    StepLimit,
    /// An observer asked to stop.
    Stopped,
    /// The state became non-finite.
    Aborted(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingOutcome {
    pub coupled: bool,
    /// Process time when the run ended (the coupling time if `coupled`).
    pub t_coupling: f64,
    pub steps: u64,
    pub final_diag: Diagnostics,
    pub status: RunStatus,
}

impl CouplingOutcome {
    /// Ended at the horizon or the step budget.
    pub fn truncated(&self) -> bool {
        matches!(self.status, RunStatus::Horizon | RunStatus::StepLimit)
    }
}

/// What happened in one step of a coupling run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub index: u64,
    pub t: f64,
    pub dt: f64,
    /// `4(V/U)² dt` at the pre-step state.
    pub dtau: f64,
    /// `4 dt / V²` at the pre-step state.
    pub dtau_tilde: f64,
    pub reflecting: bool,
    pub decision: AdaptiveControlDecision,
    pub before: Diagnostics,
    pub after: Diagnostics,
}

/// Receives every step of a coupling run; returning `Break` stops the run.
pub trait StepObserver {
    fn observe(&mut self, record: &StepRecord) -> ControlFlow<()>;
}

impl StepObserver for () {
    fn observe(&mut self, _: &StepRecord) -> ControlFlow<()> {
        ControlFlow::Continue(())
    }
}

impl<F: FnMut(&StepRecord) -> ControlFlow<()>> StepObserver for F {
    fn observe(&mut self, record: &StepRecord) -> ControlFlow<()> {
        self(record)
    }
}

pub fn run_until_coupled<R: Rng + ?Sized>(config: &FullCouplingConfig, rng: &mut R) -> Result<CouplingOutcome> {
    run_until_coupled_observed(config, rng, &mut ())
}

/// Runs the adaptive coupling until both thresholds are met.
///
/// `W < switch_low` forces pure reflection, which is kept until
/// `W ≥ switch_high`. The step is `dt = c·min(V²/(4p), U²/(4V²))` clamped
/// to `[c·ε_V²/4, dt_max]`, so each step moves the intrinsic clocks by
/// about `c`; under forced reflection the `U` term is dropped.
pub fn run_until_coupled_observed<R: Rng + ?Sized, O: StepObserver + ?Sized>(
    config: &FullCouplingConfig,
    rng: &mut R,
    observer: &mut O,
) -> Result<CouplingOutcome> {
    config.validate()?;
    let n = config.dim();
    let family = ControlFamily::for_dimension(n);
    let (eps_v, eps_u) = config.thresholds();
    let (eps_v_sq, eps_u_sq) = (eps_v * eps_v, eps_u * eps_u);
    let c = config.clock_step;
    let dt_min = (c * eps_v_sq / 4.0).max(f64::MIN_POSITIVE);

    let mut state = RelativeState::from_full(&config.initial);
    state.t = config.initial.t;
    let t_start = state.t;
    let mut tau = 0.0;
    let mut tau_tilde = 0.0;
    let mut diag = state.diagnostics(tau, tau_tilde);
    let mut reflecting = diag.w.is_none_or(|w| w < config.switch_low);
    let mut noise = vec![0.0; 2 * n];
    let mut steps = 0u64;

    let finish = |status: RunStatus, t: f64, steps: u64, diag: Diagnostics| CouplingOutcome {
        coupled: status == RunStatus::Coupled,
        t_coupling: t,
        steps,
        final_diag: diag,
        status,
    };

    loop {
        if diag.v_sq <= eps_v_sq && diag.u_sq <= eps_u_sq {
            return Ok(finish(RunStatus::Coupled, state.t, steps, diag));
        }
        if state.t - t_start >= config.horizon {
            return Ok(finish(RunStatus::Horizon, state.t, steps, diag));
        }
        if steps >= config.max_steps {
            return Ok(finish(RunStatus::StepLimit, state.t, steps, diag));
        }

        let w = if diag.u_sq == 0.0 {
            0.0
        } else if diag.v_sq == 0.0 {
            f64::INFINITY
        } else {
            diag.u_sq.sqrt() / diag.v_sq
        };
        if reflecting && w >= config.switch_high {
            reflecting = false;
        } else if !reflecting && w < config.switch_low {
            reflecting = true;
        }
        let decision = if reflecting {
            AdaptiveControlDecision::reflection()
        } else {
            adapt_parameters(w, &config.strategy, family)?
        };
        let (nu, z) = decision_frame(&state.x, &state.area)?;
        let realized = RealizedControl::from_decision(&nu, &z, decision, family)?;

        let lim_k = if decision.p > 0.0 {
            diag.v_sq / (4.0 * decision.p)
        } else {
            f64::INFINITY
        };
        // Reflection does not depend on U, and U can sit near zero for a
        // long time there, so only the V clock limits the step.
        let lim_h = if !reflecting && diag.v_sq > 0.0 {
            diag.u_sq / (4.0 * diag.v_sq)
        } else {
            f64::INFINITY
        };
        let remaining = config.horizon - (state.t - t_start);
        let dt = (c * lim_k.min(lim_h)).min(config.dt_max).max(dt_min).min(remaining);

        for z in noise.iter_mut() {
            *z = rng.sample(StandardNormal);
        }
        let (dx, db) = realized.relative_increments(dt, &noise)?;
        let dtau = if diag.u_sq > 0.0 {
            4.0 * diag.v_sq / diag.u_sq * dt
        } else {
            0.0
        };
        let dtau_tilde = if diag.v_sq > 0.0 { 4.0 * dt / diag.v_sq } else { 0.0 };
        state.advance_relative(&dx, &db, dt);
        tau += dtau;
        tau_tilde += dtau_tilde;
        steps += 1;

        let before = diag;
        diag = state.diagnostics(tau, tau_tilde);
        if !diag.v_sq.is_finite() || !diag.u_sq.is_finite() {
            return Ok(finish(
                RunStatus::Aborted(format!("non-finite state after {steps} steps")),
                state.t,
                steps,
                diag,
            ));
        }
        let record = StepRecord {
            index: steps,
            t: state.t,
            dt,
            dtau,
            dtau_tilde,
            reflecting,
            decision,
            before,
            after: diag,
        };
        if observer.observe(&record).is_break() {
            return Ok(finish(RunStatus::Stopped, state.t, steps, diag));
        }
    }
}

/// The five drift and quadratic-variation rates of `(V², U²)` per unit
/// time under a frozen control.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ItoCoefficients {
    pub drift_v_sq: f64,
    pub qv_v_sq: f64,
    pub cov_v_sq_u_sq: f64,
    pub qv_u_sq: f64,
    pub drift_u_sq: f64,
}

impl ItoCoefficients {
    pub const NAMES: [&'static str; 5] = ["drift V^2", "QV V^2", "cov V^2 U^2", "QV U^2", "drift U^2"];

    pub fn as_array(&self) -> [f64; 5] {
        [
            self.drift_v_sq,
            self.qv_v_sq,
            self.cov_v_sq_u_sq,
            self.qv_u_sq,
            self.drift_u_sq,
        ]
    }
}

/// Parts of the `U²` drift: `−4 trace(ZᵀA) U` and `4(trace(I+S) − νᵀ(I+S)ν)V²`
/// with `Z = 𝔄/U`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AreaDriftTerms {
    pub rotation: f64,
    pub spread: f64,
}

/// Theoretical rates at state `(x, area)` with `Z = 𝔄/U` and `ν = X/V`.
pub fn ito_coefficients(
    x: &Vector,
    area: &Matrix,
    control: &ControlMatrix,
) -> Result<(ItoCoefficients, AreaDriftTerms)> {
    let n = x.len();
    let nu = UnitVector::new(x.clone())?;
    let (u, z) = match normalize_area(area)? {
        AreaNorm::Scaled { u, z } => (u, z),
        AreaNorm::Degenerate => return Err(CouplingError::Degenerate("zero areal difference")),
    };
    let v_sq = x.norm_squared();
    let nu = nu.as_vector();
    let z = z.as_matrix();
    let id = Matrix::identity(n, n);
    let s = control.symmetric();
    let a = control.skew();
    let i_minus_s = &id - s;
    let i_plus_s = &id + s;
    let z_nu = z * nu;
    let rotation = -4.0 * (z.transpose() * a).trace() * u;
    let spread = 4.0 * (i_plus_s.trace() - nu.dot(&(&i_plus_s * nu))) * v_sq;
    let coefficients = ItoCoefficients {
        drift_v_sq: 2.0 * i_minus_s.trace(),
        qv_v_sq: 8.0 * nu.dot(&(&i_minus_s * nu)) * v_sq,
        cov_v_sq_u_sq: -16.0 * z_nu.dot(&(a * nu)) * u * v_sq,
        qv_u_sq: 32.0 * z_nu.dot(&(&i_plus_s * &z_nu)) * u * u * v_sq,
        drift_u_sq: rotation + spread,
    };
    Ok((coefficients, AreaDriftTerms { rotation, spread }))
}

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    /// `(value − target)/stderr`.
    pub fn z_score(&self, target: f64) -> f64 {
        (self.value - target) / self.stderr
    }
}

/// A frozen control applied at a fixed relative state.
#[derive(Debug, Clone, PartialEq)]
pub struct ItoCase {
    pub x: Vector,
    pub area: Matrix,
    pub control: ControlMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItoReport {
    pub theory: ItoCoefficients,
    pub drift_terms: AreaDriftTerms,
    /// Empirical rates in the order of [`ItoCoefficients::NAMES`].
    pub empirical: [Estimate; 5],
    pub replicas: usize,
    pub dt: f64,
}

impl ItoReport {
    pub fn z_scores(&self) -> [f64; 5] {
        let theory = self.theory.as_array();
        std::array::from_fn(|i| self.empirical[i].z_score(theory[i]))
    }

    pub fn max_abs_z(&self) -> f64 {
        self.z_scores().iter().fold(0.0, |m, z| m.max(z.abs()))
    }

    /// z-score of the empirical `U²` drift against the drift with the
    /// rotation term's sign reversed.
    pub fn reversed_rotation_z(&self) -> f64 {
        let reversed = self.drift_terms.spread - self.drift_terms.rotation;
        self.empirical[4].z_score(reversed)
    }
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// One-step conditional moments of `(ΔV², ΔU²)` across `replicas`
/// independent steps from the same state.
pub fn validate_ito_system<R: Rng + ?Sized>(
    case: &ItoCase,
    replicas: usize,
    dt: f64,
    rng: &mut R,
) -> Result<ItoReport> {
    check_dt(dt)?;
    if replicas < 2 {
        return Err(CouplingError::TooFewSamples {
            needed: 2,
            got: replicas,
        });
    }
    let n = case.x.len();
    let (theory, drift_terms) = ito_coefficients(&case.x, &case.area, &case.control)?;
    let realized = RealizedControl::new(case.control.clone())?;
    let start = RelativeState::new(case.x.clone(), &case.area)?;
    let mut noise = vec![0.0; 2 * n];
    let mut dv = Vec::with_capacity(replicas);
    let mut du = Vec::with_capacity(replicas);
    for _ in 0..replicas {
        for z in noise.iter_mut() {
            *z = rng.sample(StandardNormal);
        }
        let (da, db) = realized.increments(dt, &noise)?;
        let mut next = start.clone();
        next.advance(&da, &db, dt);
        let dx = &next.x - &start.x;
        let darea = &next.area - &start.area;
        dv.push(2.0 * start.x.dot(&dx) + dx.norm_squared());
        du.push(2.0 * start.area.dot(&darea) + darea.norm_squared());
    }
    let (mv, sv) = mean_and_stderr(&dv);
    let (mu, su) = mean_and_stderr(&du);
    let sq_v: Vec<f64> = dv.iter().map(|v| (v - mv).powi(2)).collect();
    let sq_u: Vec<f64> = du.iter().map(|u| (u - mu).powi(2)).collect();
    let cross: Vec<f64> = dv.iter().zip(&du).map(|(v, u)| (v - mv) * (u - mu)).collect();
    let (qv, qv_se) = mean_and_stderr(&sq_v);
    let (qu, qu_se) = mean_and_stderr(&sq_u);
    let (cvu, cvu_se) = mean_and_stderr(&cross);
    let per_dt = |(value, stderr): (f64, f64)| Estimate {
        value: value / dt,
        stderr: stderr / dt,
    };
    Ok(ItoReport {
        theory,
        drift_terms,
        empirical: [
            per_dt((mv, sv)),
            per_dt((qv, qv_se)),
            per_dt((cvu, cvu_se)),
            per_dt((qu, qu_se)),
            per_dt((mu, su)),
        ],
        replicas,
        dt,
    })
}

/// A random planar case: `V ∈ [0.1, 0.25]`, `U ∈ [0.5, 2]`, and a planar
/// mixed control with `p ∈ [0, 0.9]`, `θ ∈ [0.5, 1.4]` oriented by the state.
pub fn random_planar_ito_case<R: Rng + ?Sized>(rng: &mut R) -> Result<ItoCase> {
    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let v: f64 = rng.random_range(0.1..0.25);
    let u: f64 = rng.random_range(0.5..2.0);
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let x = Vector::from_vec(vec![v * phi.cos(), v * phi.sin()]);
    let c = sign * u * std::f64::consts::FRAC_1_SQRT_2;
    let area = Matrix::from_row_slice(2, 2, &[0.0, c, -c, 0.0]);
    let decision = AdaptiveControlDecision::new(rng.random_range(0.0..0.9), rng.random_range(0.5..1.4))?;
    let control = realize_decision(&x, &area, decision, ControlFamily::Planar)?;
    Ok(ItoCase { x, area, control })
}
