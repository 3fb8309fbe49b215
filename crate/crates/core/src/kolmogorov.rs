//! Coupling of the Kolmogorov diffusion: a scalar Brownian motion together
//! with its running time integral.
//!
//! With `U = B̃ − B` and `V = ∫B̃ − ∫B`, reflection makes `dU = 2 dW` while
//! synchronous coupling freezes `U`; in both phases `dV = U dt`. Each loop
//! reflects until `U` reaches minus half its previous value and then
//! synchronizes until `V` returns to zero, so the scale halves every loop.
//!
//! Reflection steps draw the exact joint Gaussian increment of
//! `(U, ∫U dt)`, and synchronous phases are solved in closed form, so the
//! only discretization error is in locating level crossings.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CouplingError, Result};
use crate::sde::RunStatus;

/// Thresholds default to this fraction of the initial scale (cubed for `V`).
pub const DEFAULT_THRESHOLD_FRACTION: f64 = 1e-4;

/// Far from the target level a step may be as long as this fraction of the
/// squared distance, so an undetected excursion across it has probability
/// below `e⁻⁵⁰`.
const FAR_STEP_FRACTION: f64 = 0.01;

const INV_SQRT_12: f64 = 0.288_675_134_594_812_9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KolmogorovPhase {
    Reflect,
    Synchronize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KolmogorovState {
    pub u: f64,
    pub v: f64,
    pub t: f64,
    pub phase: KolmogorovPhase,
    pub loop_count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KolmogorovConfig {
    pub u0: f64,
    pub v0: f64,
    /// Near a target level `L` the reflection step is `dt·L²`.
    pub dt: f64,
    pub horizon: f64,
    pub eps_u: Option<f64>,
    pub eps_v: Option<f64>,
    pub max_steps: u64,
}

impl KolmogorovConfig {
    pub fn new(u0: f64, v0: f64, dt: f64, horizon: f64) -> Self {
        KolmogorovConfig {
            u0,
            v0,
            dt,
            horizon,
            eps_u: None,
            eps_v: None,
            max_steps: 100_000_000,
        }
    }

    /// `|U₀|`, or `|V₀|^{1/3}` when `U₀ = 0`; the two are matched by
    /// Brownian scaling.
    pub fn scale(&self) -> f64 {
        if self.u0 != 0.0 {
            self.u0.abs()
        } else {
            self.v0.abs().cbrt()
        }
    }

    /// Resolved `(ε_U, ε_V)`.
    pub fn thresholds(&self) -> (f64, f64) {
        let e = DEFAULT_THRESHOLD_FRACTION * self.scale();
        (self.eps_u.unwrap_or(e), self.eps_v.unwrap_or(e * e * e))
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [("u0", self.u0), ("v0", self.v0)] {
            if !value.is_finite() {
                return Err(CouplingError::OutOfRange {
                    name,
                    value,
                    constraint: "finite",
                });
            }
        }
        for (name, value) in [("dt", self.dt), ("horizon", self.horizon)] {
            if !(value > 0.0) {
                return Err(CouplingError::OutOfRange {
                    name,
                    value,
                    constraint: "must be > 0",
                });
            }
        }
        let (eu, ev) = self.thresholds();
        if !(eu >= 0.0) || !(ev >= 0.0) {
            return Err(CouplingError::OutOfRange {
                name: "eps",
                value: eu.min(ev),
                constraint: "thresholds must be >= 0",
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KolmogorovOutcome {
    pub coupled: bool,
    pub t_coupling: f64,
    pub loops: u64,
    pub steps: u64,
    pub final_state: KolmogorovState,
    /// `|U|` target reached at the end of each completed loop.
    pub loop_targets: Vec<f64>,
    pub status: RunStatus,
}

enum Phase {
    Done,
    Stop(RunStatus),
}

struct Runner<'a, R: Rng + ?Sized> {
    state: KolmogorovState,
    t_end: f64,
    dt: f64,
    eps_u: f64,
    eps_v: f64,
    steps: u64,
    max_steps: u64,
    rng: &'a mut R,
}

impl<R: Rng + ?Sized> Runner<'_, R> {
    fn coupled(&self) -> bool {
        self.state.u.abs() <= self.eps_u && self.state.v.abs() <= self.eps_v
    }

    /// Reflects until `U` crosses `level`, placing the hit by linear
    /// interpolation within the step.
    fn reflect_to(&mut self, level: f64) -> Phase {
        self.state.phase = KolmogorovPhase::Reflect;
        let near = self.dt * level * level;
        loop {
            if self.coupled() {
                return Phase::Stop(RunStatus::Coupled);
            }
            let remaining = self.t_end - self.state.t;
            if remaining <= 0.0 {
                return Phase::Stop(RunStatus::Horizon);
            }
            if self.steps >= self.max_steps {
                return Phase::Stop(RunStatus::StepLimit);
            }
            let gap = self.state.u - level;
            let h = near.max(FAR_STEP_FRACTION * gap * gap).min(remaining);
            let z1: f64 = self.rng.sample(StandardNormal);
            let z2: f64 = self.rng.sample(StandardNormal);
            let sh = h.sqrt();
            let u_next = self.state.u + 2.0 * sh * z1;
            let v_next = self.state.v + self.state.u * h + 2.0 * h * sh * (0.5 * z1 + INV_SQRT_12 * z2);
            self.steps += 1;
            let gap_next = u_next - level;
            if gap_next == 0.0 || gap.signum() != gap_next.signum() {
                let frac = gap / (gap - gap_next);
                self.state.t += frac * h;
                self.state.v += frac * (v_next - self.state.v);
                self.state.u = level;
                return Phase::Done;
            }
            self.state.t += h;
            self.state.u = u_next;
            self.state.v = v_next;
        }
    }

    /// Synchronous coupling; requires `U·V < 0`, and then `V` reaches zero
    /// at `t + |V/U|` exactly.
    fn synchronize(&mut self) -> Phase {
        self.state.phase = KolmogorovPhase::Synchronize;
        let (u, v) = (self.state.u, self.state.v);
        debug_assert!(u * v < 0.0);
        let needed = -v / u;
        let remaining = self.t_end - self.state.t;
        if needed > remaining {
            self.state.v += u * remaining;
            self.state.t = self.t_end;
            return Phase::Stop(if self.coupled() {
                RunStatus::Coupled
            } else {
                RunStatus::Horizon
            });
        }
        self.state.t += needed;
        self.state.v = 0.0;
        Phase::Done
    }

    /// Brings `V` to zero, first reflecting `U` to `−sign(V)·magnitude`
    /// as often as needed so the synchronous drift points towards zero.
    fn settle_v(&mut self, magnitude: f64) -> Phase {
        while self.state.v != 0.0 {
            if self.coupled() {
                return Phase::Stop(RunStatus::Coupled);
            }
            let phase = if self.state.u * self.state.v < 0.0 {
                self.synchronize()
            } else {
                self.reflect_to(-self.state.v.signum() * magnitude)
            };
            if let Phase::Stop(status) = phase {
                return Phase::Stop(status);
            }
        }
        Phase::Done
    }
}

/// Runs the alternating reflection/synchronous coupling until
/// `|U| ≤ ε_U` and `|V| ≤ ε_V`.
///
/// A nonzero `V₀` is first driven to zero. Each loop then targets half the
/// previous `|U|` with the opposite sign; if `V` ends the reflection phase
/// with the same sign as `U`, reflection continues to the mirrored level.
pub fn couple_kolmogorov<R: Rng + ?Sized>(config: &KolmogorovConfig, rng: &mut R) -> Result<KolmogorovOutcome> {
    config.validate()?;
    let (eps_u, eps_v) = config.thresholds();
    let mut runner = Runner {
        state: KolmogorovState {
            u: config.u0,
            v: config.v0,
            t: 0.0,
            phase: KolmogorovPhase::Reflect,
            loop_count: 0,
        },
        t_end: config.horizon,
        dt: config.dt,
        eps_u,
        eps_v,
        steps: 0,
        max_steps: config.max_steps,
        rng,
    };
    let mut loop_targets = Vec::new();
    let mut magnitude = config.scale();

    let status = 'run: {
        if magnitude == 0.0 || runner.coupled() {
            break 'run RunStatus::Coupled;
        }
        if let Phase::Stop(status) = runner.settle_v(magnitude) {
            break 'run status;
        }
        loop {
            if runner.coupled() {
                break 'run RunStatus::Coupled;
            }
            let target = 0.5 * magnitude;
            let level = -runner.state.u.signum() * target;
            if let Phase::Stop(status) = runner.reflect_to(level) {
                break 'run status;
            }
            if let Phase::Stop(status) = runner.settle_v(target) {
                break 'run status;
            }
            magnitude = target;
            runner.state.loop_count += 1;
            loop_targets.push(magnitude);
        }
    };

    let state = runner.state;
    Ok(KolmogorovOutcome {
        coupled: status == RunStatus::Coupled,
        t_coupling: state.t,
        loops: state.loop_count,
        steps: runner.steps,
        final_state: state,
        loop_targets,
        status,
    })
}

/// First `length` bits of the Morse–Thue sequence, built by repeatedly
/// appending the complement of the prefix.
pub fn morse_thue(length: usize) -> Result<Vec<u8>> {
    if length < 1 {
        return Err(CouplingError::OutOfRange {
            name: "length",
            value: length as f64,
            constraint: "length >= 1",
        });
    }
    let mut bits = vec![0u8];
    while bits.len() < length {
        let flipped: Vec<u8> = bits.iter().map(|b| 1 - b).collect();
        bits.extend(flipped);
    }
    bits.truncate(length);
    Ok(bits)
}

/// The bits as a `0`/`1` string.
pub fn bits_to_string(bits: &[u8]) -> String {
    bits.iter().map(|b| if *b == 0 { '0' } else { '1' }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seed_for_replica;

    #[test]
    fn zero_start_is_coupled_at_once() {
        let mut rng = seed_for_replica(1, 0);
        let out = couple_kolmogorov(&KolmogorovConfig::new(0.0, 0.0, 1e-4, 10.0), &mut rng).unwrap();
        assert!(out.coupled);
        assert_eq!(out.t_coupling, 0.0);
        assert_eq!(out.steps, 0);
    }

    #[test]
    fn loop_targets_halve_exactly() {
        for id in 0..20 {
            let mut rng = seed_for_replica(2, id);
            let out = couple_kolmogorov(&KolmogorovConfig::new(1.5, 0.0, 1e-4, 1e6), &mut rng).unwrap();
            assert!(out.coupled);
            assert_eq!(out.loops as usize, out.loop_targets.len());
            for (k, target) in out.loop_targets.iter().enumerate() {
                assert_eq!(*target, 1.5 / 2f64.powi(k as i32 + 1));
            }
            assert!(out.final_state.u.abs() <= 1.5e-4);
        }
    }

    #[test]
    fn nonzero_v0_is_settled_first() {
        for (u0, v0) in [(1.0, 0.3), (1.0, -0.3), (0.0, 0.5), (-2.0, 1.0)] {
            let mut rng = seed_for_replica(3, 0);
            let out = couple_kolmogorov(&KolmogorovConfig::new(u0, v0, 1e-4, 1e6), &mut rng).unwrap();
            assert!(out.coupled, "{u0} {v0}");
            assert!(out.t_coupling > 0.0);
        }
    }

    #[test]
    fn horizon_stops_the_run() {
        let mut rng = seed_for_replica(4, 0);
        let out = couple_kolmogorov(&KolmogorovConfig::new(1.0, 0.0, 1e-4, 1e-3), &mut rng).unwrap();
        assert!(!out.coupled);
        assert_eq!(out.status, RunStatus::Horizon);
        assert!((out.t_coupling - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_config() {
        let mut rng = seed_for_replica(5, 0);
        assert!(couple_kolmogorov(&KolmogorovConfig::new(1.0, 0.0, 0.0, 1.0), &mut rng).is_err());
        assert!(couple_kolmogorov(&KolmogorovConfig::new(f64::NAN, 0.0, 1e-4, 1.0), &mut rng).is_err());
        assert!(couple_kolmogorov(&KolmogorovConfig::new(1.0, 0.0, 1e-4, -1.0), &mut rng).is_err());
    }

    #[test]
    fn morse_thue_prefix() {
        assert_eq!(bits_to_string(&morse_thue(16).unwrap()), "0110100110010110");
        assert_eq!(morse_thue(1).unwrap(), vec![0]);
        assert_eq!(morse_thue(5).unwrap().len(), 5);
        assert!(morse_thue(0).is_err());
    }
}
