//! Aggregate statistics of an experiment's records.
//!
//! [`summarize`] reads nothing but the configuration and the records, so a
//! summary rebuilt from a persisted CSV file equals the original.

use serde::Serialize;

use super::config::{ExperimentConfig, ExperimentKind};
use super::records::{RecordData, RecordStatus, RunRecord};
use crate::controls::StrategyMode;
use crate::dufresne::{
    dufresne_distribution, ln_gamma_quantile, rotation_exponent, theorem_limit_reflection_sync, DufresneSpec,
    InvGammaSpec,
};
use crate::stats::{ks_statistic, mean_stderr, quantile_sorted, tail_index_from_logs};

pub const SUMMARY_QUANTILES: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

/// Two scale constants agree with a fitted scale when within this relative band.
pub const SCALE_MATCH_TOLERANCE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuantilePoint {
    pub p: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KsSummary {
    pub law: String,
    pub index: f64,
    pub scale: f64,
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailSummary {
    pub kappa: f64,
    pub stderr: f64,
    pub k: usize,
    /// Index of the analytic limit law, when there is one.
    pub target: Option<f64>,
}

/// Scale of `scale/Γ_index` fitted to the samples by matching medians.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleFit {
    pub index: f64,
    pub fitted: f64,
    pub stated: Option<f64>,
    pub composed: f64,
    /// `stated`, `composed`, `both` or `neither`, at
    /// [`SCALE_MATCH_TOLERANCE`].
    pub matches: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub experiment: ExperimentKind,
    pub records: usize,
    /// Records the statistics below are computed from.
    pub sample_count: usize,
    pub aborted: usize,
    pub panicked: usize,
    pub failed: usize,
    pub coupled_fraction: Option<f64>,
    pub truncated: usize,
    pub absorbed: Option<usize>,
    pub mean: Option<f64>,
    pub mean_stderr: Option<f64>,
    pub quantiles: Vec<QuantilePoint>,
    pub ks: Option<KsSummary>,
    pub tail_index: Option<TailSummary>,
    pub scale_fit: Option<ScaleFit>,
    pub max_abs_z: Option<f64>,
}

impl Summary {
    /// Replicas that did not finish normally.
    pub fn bad_replicas(&self) -> usize {
        self.aborted + self.panicked + self.failed
    }
}

/// The analytic law the samples are compared with, if any.
pub fn reference_law(config: &ExperimentConfig) -> Option<(String, InvGammaSpec)> {
    match config.experiment {
        ExperimentKind::DufresneCheck => {
            let spec = DufresneSpec::new(config.a, config.b).ok()?;
            Some(("dufresne".into(), dufresne_distribution(&spec).ok()?))
        }
        ExperimentKind::ReducedCouplingDist => match config.mode {
            StrategyMode::ReflectionSynchronous => {
                let limit = theorem_limit_reflection_sync(config.alpha_sq).ok()?;
                Some(("composed-limit".into(), limit.composed_law))
            }
            StrategyMode::ReflectionRotation => {
                let (a_sq, b) = rotation_exponent(config.alpha_sq, config.beta).ok()?;
                Some((
                    "composed-limit".into(),
                    InvGammaSpec::new(2.0 * b / a_sq, 0.5 / a_sq).ok()?,
                ))
            }
            StrategyMode::PureReflection => None,
        },
        _ => None,
    }
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

fn quantile_points(sorted: &[f64], map: impl Fn(f64) -> f64) -> Vec<QuantilePoint> {
    SUMMARY_QUANTILES
        .iter()
        .filter_map(|&p| quantile_sorted(sorted, p).map(|v| QuantilePoint { p, value: map(v) }))
        .collect()
}

fn within(fitted: f64, constant: f64) -> bool {
    (fitted / constant - 1.0).abs() <= SCALE_MATCH_TOLERANCE
}

pub fn summarize(config: &ExperimentConfig, records: &[RunRecord]) -> Summary {
    let count = |s: RecordStatus| records.iter().filter(|r| r.status == s).count();
    let ok: Vec<&RunRecord> = records.iter().filter(|r| r.status == RecordStatus::Ok).collect();
    let mut summary = Summary {
        experiment: config.experiment,
        records: records.len(),
        sample_count: 0,
        aborted: count(RecordStatus::Aborted),
        panicked: count(RecordStatus::Panicked),
        failed: count(RecordStatus::Failed),
        coupled_fraction: None,
        truncated: 0,
        absorbed: None,
        mean: None,
        mean_stderr: None,
        quantiles: Vec::new(),
        ks: None,
        tail_index: None,
        scale_fit: None,
        max_abs_z: None,
    };
    let law = reference_law(config);
    let tail = |logs: &[f64], target: Option<f64>| {
        tail_index_from_logs(logs, config.tail_fraction)
            .ok()
            .map(|t| TailSummary {
                kappa: t.kappa,
                stderr: t.stderr,
                k: t.k,
                target,
            })
    };
    let ks = |samples: &[f64]| {
        law.as_ref().and_then(|(name, spec)| {
            ks_statistic(samples, |x| spec.cdf(x)).ok().map(|(d, p)| KsSummary {
                law: name.clone(),
                index: spec.index,
                scale: spec.scale,
                statistic: d,
                p_value: p,
            })
        })
    };

    let coupled_times = |summary: &mut Summary| {
        let mut times = Vec::new();
        let mut coupled = 0usize;
        for r in records {
            match r.data {
                RecordData::Full {
                    coupled: c,
                    t,
                    truncated,
                    ..
                }
                | RecordData::Kolmogorov {
                    coupled: c,
                    t,
                    truncated,
                    ..
                } => {
                    if truncated {
                        summary.truncated += 1;
                    }
                    if c && r.status == RecordStatus::Ok {
                        coupled += 1;
                        times.push(t);
                    }
                }
                _ => {}
            }
        }
        summary.coupled_fraction = (!records.is_empty()).then(|| coupled as f64 / records.len() as f64);
        times
    };

    match config.experiment {
        ExperimentKind::FullCoupling | ExperimentKind::Kolmogorov => {
            let times = sorted(coupled_times(&mut summary));
            summary.sample_count = times.len();
            if let Some((m, se)) = mean_stderr(&times) {
                summary.mean = Some(m);
                summary.mean_stderr = Some(se);
            }
            summary.quantiles = quantile_points(&times, |v| v);
            let logs: Vec<f64> = times.iter().filter(|t| **t > 0.0).map(|t| t.ln()).collect();
            summary.tail_index = tail(&logs, None);
        }
        ExperimentKind::ReducedCouplingDist => {
            let mut absorbed = 0usize;
            let mut logs = Vec::new();
            let mut values = Vec::new();
            for r in &ok {
                if let RecordData::Reduced {
                    scaled_t,
                    absorbed: a,
                    truncated,
                    log_scaled_t,
                    ..
                } = r.data
                {
                    if a {
                        absorbed += 1;
                    }
                    if truncated {
                        summary.truncated += 1;
                    }
                    if (a || !config.conditioned) && log_scaled_t.is_finite() {
                        logs.push(log_scaled_t);
                        values.push(scaled_t);
                    }
                }
            }
            summary.absorbed = Some(absorbed);
            summary.sample_count = logs.len();
            let logs = sorted(logs);
            summary.quantiles = quantile_points(&logs, f64::exp);
            summary.ks = ks(&values);
            let target = law.as_ref().map(|(_, s)| s.index);
            summary.tail_index = tail(&logs, target);
            if let (Some((_, spec)), Some(log_median)) = (&law, quantile_sorted(&logs, 0.5)) {
                let fitted = (log_median + ln_gamma_quantile(spec.index, 0.5)).exp();
                let stated = match config.mode {
                    StrategyMode::ReflectionSynchronous => theorem_limit_reflection_sync(config.alpha_sq)
                        .ok()
                        .map(|l| l.stated_law.scale),
                    _ => None,
                };
                let m_stated = stated.is_some_and(|s| within(fitted, s));
                let m_composed = within(fitted, spec.scale);
                summary.scale_fit = Some(ScaleFit {
                    index: spec.index,
                    fitted,
                    stated,
                    composed: spec.scale,
                    matches: match (m_stated, m_composed) {
                        (true, true) => "both",
                        (true, false) => "stated",
                        (false, true) => "composed",
                        (false, false) => "neither",
                    }
                    .into(),
                });
            }
        }
        ExperimentKind::DufresneCheck => {
            let values: Vec<f64> = ok
                .iter()
                .filter_map(|r| match r.data {
                    RecordData::Dufresne { value } => Some(value),
                    _ => None,
                })
                .collect();
            summary.sample_count = values.len();
            if let Some((m, se)) = mean_stderr(&values) {
                summary.mean = Some(m);
                summary.mean_stderr = Some(se);
            }
            summary.ks = ks(&values);
            let values = sorted(values);
            summary.quantiles = quantile_points(&values, |v| v);
            let logs: Vec<f64> = values.iter().filter(|v| **v > 0.0).map(|v| v.ln()).collect();
            summary.tail_index = tail(&logs, law.as_ref().map(|(_, s)| s.index));
        }
        ExperimentKind::ItoValidate => {
            let zs: Vec<f64> = ok
                .iter()
                .filter_map(|r| match r.data {
                    RecordData::Ito { max_abs_z, .. } => Some(max_abs_z),
                    _ => None,
                })
                .collect();
            summary.sample_count = zs.len();
            summary.max_abs_z = zs.iter().copied().reduce(f64::max);
        }
    }
    summary
}
