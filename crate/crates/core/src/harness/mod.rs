//! Declarative experiment runner.
//!
//! Replicas run on a dedicated rayon pool and are collected in replica
//! order. Replica `i` draws only from stream `i` of the base seed, so the
//! records do not depend on the worker count or on scheduling.

pub mod config;
pub mod records;
pub mod summary;

use std::ops::Range;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

pub use config::{ExperimentConfig, ExperimentKind, OutputFormat, CONFIG_KEYS};
pub use records::{parse_records_csv, records_to_csv, RecordData, RecordLayout, RecordStatus, RunRecord};
pub use summary::{reference_law, summarize, KsSummary, QuantilePoint, ScaleFit, Summary, TailSummary};

use crate::dufresne::{mc_exponential_functional_with, DufresneSpec};
use crate::error::{CouplingError, Result};
use crate::kolmogorov::{couple_kolmogorov, KolmogorovConfig};
use crate::reduced::{simulate_scaled_coupling_time, ReducedRunConfig};
use crate::rng::seed_for_replica;
use crate::sde::{random_planar_ito_case, run_until_coupled, validate_ito_system, FullCouplingConfig, RunStatus};

/// Conditioned collection gives up after this many batches of `replicas`.
pub const MAX_CONDITIONING_BATCHES: u64 = 20;

/// Execution settings that do not affect results.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Worker threads; `None` uses every available core.
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailureNote {
    pub replica_id: u64,
    pub status: RecordStatus,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub config: ExperimentConfig,
    pub layout: RecordLayout,
    pub records: Vec<RunRecord>,
    pub summary: Summary,
    pub failures: Vec<FailureNote>,
}

#[derive(Serialize)]
struct SummaryDocument<'a> {
    config: &'a ExperimentConfig,
    config_text: String,
    summary: &'a Summary,
    failures: &'a [FailureNote],
}

#[derive(Serialize)]
struct FullDocument<'a> {
    #[serde(flatten)]
    head: SummaryDocument<'a>,
    records: &'a [RunRecord],
}

impl Report {
    pub fn csv(&self) -> String {
        records_to_csv(self.layout, &self.records).expect("records share the report layout")
    }

    /// Effective configuration, summary and failure notes.
    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.head()).expect("serializable")
    }

    /// [`Report::summary_json`] plus every record.
    pub fn full_json(&self) -> String {
        serde_json::to_string_pretty(&FullDocument {
            head: self.head(),
            records: &self.records,
        })
        .expect("serializable")
    }

    fn head(&self) -> SummaryDocument<'_> {
        SummaryDocument {
            config: &self.config,
            config_text: self.config.to_text(),
            summary: &self.summary,
            failures: &self.failures,
        }
    }

    /// Some replica aborted, panicked or failed.
    pub fn has_failures(&self) -> bool {
        self.summary.bad_replicas() > 0
    }
}

/// Where a CSV report's summary goes.
pub fn summary_path(records_path: &Path) -> PathBuf {
    let mut name = records_path.as_os_str().to_owned();
    name.push(".summary.json");
    PathBuf::from(name)
}

/// Writes `report` to `config.output_path` in `config.format`; CSV output
/// also writes [`summary_path`]. Returns the files written.
pub fn write_report(report: &Report) -> Result<Vec<PathBuf>> {
    let path = Path::new(&report.config.output_path);
    match report.config.format {
        OutputFormat::Csv => {
            let summary = summary_path(path);
            std::fs::write(path, report.csv())?;
            std::fs::write(&summary, report.summary_json())?;
            Ok(vec![path.to_path_buf(), summary])
        }
        OutputFormat::Json => {
            std::fs::write(path, report.full_json())?;
            Ok(vec![path.to_path_buf()])
        }
    }
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "panic".into()
    }
}

/// Evaluates `f` for every id on `workers` threads, in id order. A panic
/// in one call becomes `Err(message)` for that id only.
pub fn run_parallel<T, F>(ids: Range<u64>, workers: Option<usize>, f: F) -> Result<Vec<std::result::Result<T, String>>>
where
    T: Send,
    F: Fn(u64) -> T + Sync,
{
    if workers == Some(0) {
        return Err(CouplingError::config("workers", "must be >= 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| CouplingError::config("workers", e.to_string()))?;
    Ok(pool.install(|| {
        ids.into_par_iter()
            .map(|id| catch_unwind(AssertUnwindSafe(|| f(id))).map_err(panic_message))
            .collect()
    }))
}

type Outcome = (RecordStatus, RecordData, Option<String>);

/// The per-replica job of one experiment, with all validation done up front.
enum Job {
    Full(FullCouplingConfig),
    Reduced(ReducedRunConfig),
    Dufresne(DufresneSpec, f64, crate::dufresne::TailCutoff),
    Ito { samples: usize, dt: f64 },
    Kolmogorov(KolmogorovConfig),
}

fn field_error(e: CouplingError) -> CouplingError {
    match e {
        CouplingError::OutOfRange {
            name,
            value,
            constraint,
        } => CouplingError::config(name, format!("{value} violates {constraint}")),
        other => other,
    }
}

impl Job {
    fn build(config: &ExperimentConfig) -> Result<Job> {
        config.validate()?;
        let dt = config.resolved_dt();
        let horizon = config.resolved_horizon();
        let job = match config.experiment {
            ExperimentKind::FullCoupling => {
                let mut full =
                    FullCouplingConfig::from_ratio(config.strategy()?, config.n, config.resolved_v0(), config.w0)
                        .map_err(field_error)?;
                full.dt_max = dt;
                full.clock_step = config.clock_step;
                full.eps_v = config.eps_v;
                full.eps_u = config.eps_u;
                if let Some(level) = config.switch_level {
                    full.switch_low = level;
                    full.switch_high = 2.0 * level;
                }
                full.horizon = horizon;
                full.max_steps = config.max_steps;
                full.validate().map_err(field_error)?;
                Job::Full(full)
            }
            ExperimentKind::ReducedCouplingDist => {
                let mut reduced = ReducedRunConfig::new(config.strategy()?, config.w0, config.dtau, horizon);
                reduced.switch_level = config.switch_level;
                reduced.cutoff = config.cutoff();
                reduced.validate().map_err(field_error)?;
                Job::Reduced(reduced)
            }
            ExperimentKind::DufresneCheck => Job::Dufresne(
                DufresneSpec::new(config.a, config.b).map_err(field_error)?,
                dt,
                config.cutoff(),
            ),
            ExperimentKind::ItoValidate => Job::Ito {
                samples: usize::try_from(config.replicas)
                    .map_err(|_| CouplingError::config("replicas", "too large"))?,
                dt,
            },
            ExperimentKind::Kolmogorov => {
                let mut k = KolmogorovConfig::new(config.u0, config.resolved_v0(), dt, horizon);
                k.eps_u = config.eps_u;
                k.eps_v = config.eps_v;
                k.max_steps = config.max_steps;
                k.validate().map_err(field_error)?;
                Job::Kolmogorov(k)
            }
        };
        Ok(job)
    }

    fn layout(&self) -> RecordLayout {
        match self {
            Job::Full(_) => RecordLayout::Full,
            Job::Reduced(_) => RecordLayout::Reduced,
            Job::Dufresne(..) => RecordLayout::Dufresne,
            Job::Ito { .. } => RecordLayout::Ito,
            Job::Kolmogorov(_) => RecordLayout::Kolmogorov,
        }
    }

    fn run(&self, seed: u64, id: u64) -> Result<Outcome> {
        let mut rng = seed_for_replica(seed, id);
        Ok(match self {
            Job::Full(c) => {
                let out = run_until_coupled(c, &mut rng)?;
                let (status, note) = match &out.status {
                    RunStatus::Aborted(m) => (RecordStatus::Aborted, Some(m.clone())),
                    _ => (RecordStatus::Ok, None),
                };
                let data = RecordData::Full {
                    coupled: out.coupled,
                    t: out.t_coupling,
                    steps: out.steps,
                    final_vsq: out.final_diag.v_sq,
                    final_usq: out.final_diag.u_sq,
                    truncated: out.truncated(),
                };
                (status, data, note)
            }
            Job::Reduced(c) => {
                let out = simulate_scaled_coupling_time(c, &mut rng)?;
                let data = RecordData::Reduced {
                    scaled_t: out.scaled_t,
                    absorbed: out.absorbed,
                    truncated: out.truncated,
                    tau_end: out.tau_end,
                    log_scaled_t: out.log_scaled_t,
                    steps: out.steps,
                };
                if out.aborted {
                    (
                        RecordStatus::Aborted,
                        data,
                        Some(format!("non-finite exponent after {} steps", out.steps)),
                    )
                } else {
                    (RecordStatus::Ok, data, None)
                }
            }
            Job::Dufresne(spec, dt, cutoff) => {
                let value = mc_exponential_functional_with(spec, *dt, *cutoff, &mut rng)?;
                let status = if value.is_finite() {
                    RecordStatus::Ok
                } else {
                    RecordStatus::Aborted
                };
                (status, RecordData::Dufresne { value }, None)
            }
            Job::Ito { samples, dt } => {
                let case = random_planar_ito_case(&mut rng)?;
                let report = validate_ito_system(&case, *samples, *dt, &mut rng)?;
                let data = RecordData::Ito {
                    z: report.z_scores(),
                    max_abs_z: report.max_abs_z(),
                    reversed_sign_z: report.reversed_rotation_z(),
                };
                (RecordStatus::Ok, data, None)
            }
            Job::Kolmogorov(c) => {
                let out = couple_kolmogorov(c, &mut rng)?;
                let data = RecordData::Kolmogorov {
                    coupled: out.coupled,
                    t: out.t_coupling,
                    steps: out.steps,
                    loops: out.loops,
                    truncated: matches!(out.status, RunStatus::Horizon | RunStatus::StepLimit),
                };
                (RecordStatus::Ok, data, None)
            }
        })
    }
}

fn run_batch(
    job: &Job,
    config: &ExperimentConfig,
    ids: Range<u64>,
    options: RunOptions,
    records: &mut Vec<RunRecord>,
    failures: &mut Vec<FailureNote>,
) -> Result<()> {
    let start = ids.start;
    let results = run_parallel(ids, options.workers, |id| job.run(config.seed, id))?;
    let layout = job.layout();
    for (offset, result) in results.into_iter().enumerate() {
        let replica_id = start + offset as u64;
        let (status, data, note) = match result {
            Ok(Ok(outcome)) => outcome,
            Ok(Err(e)) => (RecordStatus::Failed, RecordData::missing(layout), Some(e.to_string())),
            Err(message) => (RecordStatus::Panicked, RecordData::missing(layout), Some(message)),
        };
        if let Some(message) = note {
            failures.push(FailureNote {
                replica_id,
                status,
                message,
            });
        }
        records.push(RunRecord {
            replica_id,
            seed_used: config.seed,
            status,
            data,
        });
    }
    Ok(())
}

/// Runs every replica of `config` and summarizes them.
///
/// For the conditioned reduced experiment, replicas run in batches of
/// `replicas` ids until that many stay above the switch level; records
/// after the last needed one are dropped, so the kept set depends only on
/// the seed.
pub fn run_experiment(config: &ExperimentConfig, options: RunOptions) -> Result<Report> {
    if options.workers == Some(0) {
        return Err(CouplingError::config("workers", "must be >= 1"));
    }
    let job = Job::build(config)?;
    let mut records = Vec::new();
    let mut failures = Vec::new();
    let n = match config.experiment {
        ExperimentKind::ItoValidate => config.cases,
        _ => config.replicas,
    };
    if let (Job::Reduced(_), true) = (&job, config.conditioned) {
        let wanted = config.replicas as usize;
        let mut kept = 0usize;
        for batch in 0..MAX_CONDITIONING_BATCHES {
            let first = records.len();
            run_batch(
                &job,
                config,
                batch * n..(batch + 1) * n,
                options,
                &mut records,
                &mut failures,
            )?;
            let mut cut = None;
            for (i, r) in records[first..].iter().enumerate() {
                if r.status == RecordStatus::Ok && matches!(r.data, RecordData::Reduced { absorbed: true, .. }) {
                    kept += 1;
                    if kept == wanted {
                        cut = Some(first + i + 1);
                        break;
                    }
                }
            }
            if let Some(cut) = cut {
                records.truncate(cut);
                let last = records.last().map_or(0, |r| r.replica_id);
                failures.retain(|f| f.replica_id <= last);
                break;
            }
        }
    } else {
        run_batch(&job, config, 0..n, options, &mut records, &mut failures)?;
    }
    let summary = summarize(config, &records);
    Ok(Report {
        config: config.clone(),
        layout: job.layout(),
        records,
        summary,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(kind: ExperimentKind) -> ExperimentConfig {
        let mut c = ExperimentConfig {
            experiment: kind,
            replicas: 40,
            ..ExperimentConfig::default()
        };
        match kind {
            ExperimentKind::FullCoupling => {
                c.w0 = 50.0;
                c.v0 = Some(1e-3);
                c.horizon = Some(1e-3);
            }
            ExperimentKind::ReducedCouplingDist => c.w0 = 100.0,
            ExperimentKind::ItoValidate => {
                c.cases = 2;
                c.replicas = 2000;
            }
            _ => {}
        }
        c
    }

    #[test]
    fn every_experiment_runs_and_is_deterministic() {
        for kind in ExperimentKind::ALL {
            let config = small(kind);
            let a = run_experiment(&config, RunOptions { workers: Some(1) }).unwrap();
            let b = run_experiment(&config, RunOptions { workers: Some(3) }).unwrap();
            assert_eq!(a.csv(), b.csv(), "{kind}");
            assert_eq!(a.summary_json(), b.summary_json(), "{kind}");
            assert!(!a.has_failures(), "{kind}: {:?}", a.failures);
        }
    }

    #[test]
    fn summary_survives_csv_round_trip() {
        for kind in ExperimentKind::ALL {
            let config = small(kind);
            let report = run_experiment(&config, RunOptions::default()).unwrap();
            let (layout, records) = parse_records_csv(&report.csv()).unwrap();
            assert_eq!(layout, report.layout);
            let again = summarize(&config, &records);
            assert_eq!(
                serde_json::to_string(&again).unwrap(),
                serde_json::to_string(&report.summary).unwrap(),
                "{kind}"
            );
        }
    }

    #[test]
    fn conditioned_collection_keeps_exactly_the_requested_count() {
        let mut config = small(ExperimentKind::ReducedCouplingDist);
        config.replicas = 30;
        let report = run_experiment(&config, RunOptions::default()).unwrap();
        assert_eq!(report.summary.sample_count, 30);
        let last = report.records.last().unwrap();
        assert!(matches!(last.data, RecordData::Reduced { absorbed: true, .. }));
        for (i, r) in report.records.iter().enumerate() {
            assert_eq!(r.replica_id, i as u64);
        }
    }

    #[test]
    fn panics_are_recorded_per_replica() {
        let out = run_parallel(0..8, Some(2), |id| {
            if id == 5 {
                panic!("replica five");
            }
            id * 2
        })
        .unwrap();
        assert_eq!(out.len(), 8);
        assert_eq!(out[5], Err("replica five".to_string()));
        assert_eq!(out[7], Ok(14));
        assert!(run_parallel(0..1, Some(0), |id| id).is_err());
    }

    #[test]
    fn invalid_configs_fail_before_running() {
        let mut config = small(ExperimentKind::FullCoupling);
        config.n = 1;
        match run_experiment(&config, RunOptions::default()) {
            Err(CouplingError::Config { field, .. }) => assert_eq!(field, "n"),
            other => panic!("{other:?}"),
        }
    }
}
