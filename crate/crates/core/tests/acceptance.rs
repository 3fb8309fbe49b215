//! Acceptance gate: each check prints one PASS/FAIL line and the process
//! exits non-zero if any check fails.

use std::ops::ControlFlow;
use std::time::Instant;

use levy_area_coupling::controls::{
    mixed_nd_control, planar_mixed_control, AdaptiveControlDecision, StrategyMode, StrategyParams,
};
use levy_area_coupling::dufresne::{limit_params_rotation, rotation_limit_index, theorem_limit_reflection_sync};
use levy_area_coupling::geometry::{planar_rotation, validate_control, Matrix, SkewUnitMatrix, UnitVector, Vector};
use levy_area_coupling::harness::{run_experiment, ExperimentConfig, ExperimentKind, RecordData, Report, RunOptions};
use levy_area_coupling::kolmogorov::{bits_to_string, morse_thue};
use levy_area_coupling::rng::seed_for_replica;
use levy_area_coupling::sde::{
    apply_increments, areal_difference, run_until_coupled_observed, FullCouplingConfig, FullState, StepRecord,
};
use rand::Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn normal_vector<R: Rng>(n: usize, rng: &mut R) -> Vector {
    Vector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

fn random_unit<R: Rng>(n: usize, rng: &mut R) -> UnitVector {
    UnitVector::new(normal_vector(n, rng)).unwrap()
}

fn random_skew<R: Rng>(n: usize, rng: &mut R) -> Matrix {
    let g = Matrix::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    &g - g.transpose()
}

fn run(config: &ExperimentConfig) -> Report {
    run_experiment(config, RunOptions::default()).unwrap()
}

fn config(kind: ExperimentKind) -> ExperimentConfig {
    ExperimentConfig {
        experiment: kind,
        ..ExperimentConfig::default()
    }
}

fn median_of(report: &Report) -> f64 {
    report.summary.quantiles.iter().find(|q| q.p == 0.5).unwrap().value
}

fn euler_formula() -> Outcome {
    let z = SkewUnitMatrix::planar();
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let theta = -std::f64::consts::PI + 2.0 * std::f64::consts::PI * i as f64 / 99.0;
        let m = z.as_matrix() * (-std::f64::consts::SQRT_2 * theta);
        let mut term = Matrix::identity(2, 2);
        let mut series = term.clone();
        for k in 1..30 {
            term = &term * &m / k as f64;
            series += &term;
        }
        worst = worst.max((planar_rotation(&z, theta).unwrap() - series).amax());
    }
    outcome(
        worst <= 1e-10,
        format!("max |closed form - series| = {worst:.2e} over 100 angles"),
    )
}

fn control_validity() -> Outcome {
    let mut rng = seed_for_replica(11, 0);
    let mut invalid = 0;
    for i in 0..10_000 {
        let n = [2, 3, 4, 2][i % 4];
        let nu = random_unit(n, &mut rng);
        let z = SkewUnitMatrix::from_skew(&random_skew(n, &mut rng)).unwrap();
        let p = rng.random::<f64>();
        let control = if i % 4 == 3 {
            let theta = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            planar_mixed_control(&nu, &z, AdaptiveControlDecision::new(p, theta).unwrap())
        } else {
            let theta = rng.random_range(-std::f64::consts::SQRT_2..=std::f64::consts::SQRT_2);
            mixed_nd_control(&nu, &z, AdaptiveControlDecision::new(p, theta).unwrap())
        }
        .unwrap();
        if !validate_control(&control, 1e-10).unwrap() {
            invalid += 1;
        }
    }
    outcome(
        invalid == 0,
        format!("{invalid} of 10000 mixed controls violate JᵀJ ≤ I"),
    )
}

fn planar_constants() -> Outcome {
    let mut rng = seed_for_replica(12, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let nu = random_unit(2, &mut rng);
        let z = SkewUnitMatrix::from_skew(&random_skew(2, &mut rng)).unwrap();
        let zn = z.as_matrix() * nu.as_vector();
        let gn = z.gram() * nu.as_vector();
        worst = worst
            .max((zn.norm_squared() - 0.5).abs())
            .max((gn.norm_squared() - 0.25).abs());
    }
    outcome(worst <= 1e-12, format!("max deviation {worst:.2e} over 1000 draws"))
}

fn ito_system() -> Outcome {
    let mut c = config(ExperimentKind::ItoValidate);
    c.cases = 5;
    c.replicas = 100_000;
    c.dt = Some(1e-5);
    c.seed = 2024;
    let report = run(&c);
    let max_z = report.summary.max_abs_z.unwrap_or(f64::INFINITY);
    let reversed: Vec<String> = report
        .records
        .iter()
        .filter_map(|r| match r.data {
            RecordData::Ito { reversed_sign_z, .. } => Some(format!("{reversed_sign_z:.1}")),
            _ => None,
        })
        .collect();
    let pass = report.summary.sample_count == 5 && !report.has_failures() && max_z < 4.0;
    outcome(
        pass,
        format!(
            "max |z| = {max_z:.2} across 5 cases x 5 coefficients (1e5 steps each, dt = 1e-5); U² drift z with the rotation sign flipped: [{}]",
            reversed.join(", ")
        ),
    )
}

fn dufresne_identity() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (a, b) in [(1.0, 1.0), (2.0, 2.0), (1.5, 1.0)] {
        let mut c = config(ExperimentKind::DufresneCheck);
        c.a = a;
        c.b = b;
        c.replicas = 20_000;
        c.seed = 77;
        let report = run(&c);
        let ks = report.summary.ks.clone().unwrap();
        pass &= ks.p_value > 1e-3 && !report.has_failures();
        parts.push(format!("({a},{b}) KS p = {:.3}", ks.p_value));
        if (a, b) == (1.0, 1.0) {
            let (m, se) = (report.summary.mean.unwrap(), report.summary.mean_stderr.unwrap());
            pass &= (m - 2.0).abs() <= 3.0 * se;
            parts.push(format!("mean {m:.4} ± {se:.4}"));
        }
    }
    outcome(pass, parts.join(", "))
}

fn reduced_config(alpha_sq: f64, replicas: u64, seed: u64) -> ExperimentConfig {
    let mut c = config(ExperimentKind::ReducedCouplingDist);
    c.mode = StrategyMode::ReflectionSynchronous;
    c.alpha_sq = alpha_sq;
    c.w0 = 1e3;
    c.dtau = 1e-2;
    c.replicas = replicas;
    c.seed = seed;
    c
}

fn tail_index(baseline: &Report) -> Outcome {
    let target = theorem_limit_reflection_sync(1.5).unwrap().composed_law.index;
    let tail = baseline.summary.tail_index.unwrap();
    let within = ((tail.kappa - target) / target).abs() <= 0.25;
    let steep = run(&reduced_config(1.9, 2000, 606));
    let paired = run(&reduced_config(1.5, 2000, 606));
    let (k19, k15) = (
        steep.summary.tail_index.unwrap().kappa,
        paired.summary.tail_index.unwrap().kappa,
    );
    let pass = within && k19 < k15 && baseline.summary.sample_count == 10_000 && !baseline.has_failures();
    outcome(
        pass,
        format!(
            "kappa_hat {:.4} ± {:.4} vs 1/14 = {target:.4} (N = {}); paired N = 2000: {k15:.4} at 1.5 -> {k19:.4} at 1.9",
            tail.kappa, tail.stderr, baseline.summary.sample_count
        ),
    )
}

fn scale_arbitration(baseline: &Report) -> Outcome {
    let fit = baseline.summary.scale_fit.clone().unwrap();
    let mut parts = vec![format!("W0 = 1e3: {:.4e} ({})", fit.fitted, fit.matches)];
    for w0 in [1e6, 1e9] {
        let mut c = reduced_config(1.5, 2000, 707);
        c.w0 = w0;
        let far = run(&c).summary.scale_fit.unwrap();
        parts.push(format!("W0 = {w0:e}: {:.4e} ({})", far.fitted, far.matches));
    }
    outcome(
        true,
        format!(
            "report only: fitted scale {}; stated {:.4e}, composed {:.4e}",
            parts.join(", "),
            fit.stated.unwrap(),
            fit.composed
        ),
    )
}

fn rotation_boundary() -> Outcome {
    let edge = limit_params_rotation(3.0, 2.0).unwrap().index();
    let edge_direct = rotation_limit_index(3.0, 2.0).unwrap();
    let target = rotation_limit_index(2.5, 1.2).unwrap();
    let mut c = config(ExperimentKind::ReducedCouplingDist);
    c.mode = StrategyMode::ReflectionRotation;
    c.alpha_sq = 2.5;
    c.beta = 1.2;
    c.w0 = 1e3;
    c.dtau = 5e-3;
    c.replicas = 10_000;
    c.seed = 808;
    let report = run(&c);
    let kappa = report.summary.tail_index.unwrap().kappa;
    let pass = edge == 0.5
        && edge_direct == 0.5
        && ((kappa - target) / target).abs() <= 0.25
        && report.summary.sample_count == 10_000;
    outcome(
        pass,
        format!("index at (3,2) = {edge}; at (2.5,1.2) kappa_hat {kappa:.4} vs 2b/a² = {target:.4}"),
    )
}

fn full_vs_reduced() -> Outcome {
    const ALPHA_SQ: f64 = 1.5;
    const TAU_END: f64 = 8.0;
    const BLOCK: f64 = 0.25;
    let strategy = StrategyParams::reflection_synchronous(ALPHA_SQ).unwrap();
    let mut cfg = FullCouplingConfig::from_ratio(strategy, 2, 1.0, 50.0).unwrap();
    cfg.eps_v = Some(0.0);
    cfg.eps_u = Some(0.0);
    cfg.clock_step = 1e-3;
    cfg.dt_max = f64::INFINITY;
    cfg.horizon = 1e300;
    let boundary = ALPHA_SQ.sqrt();

    let (mut sum_dk, mut sum_dh, mut sum_tau) = (0.0, 0.0, 0.0);
    let mut k_steps = Vec::new();
    let mut blocks = Vec::new();
    for id in 0..800 {
        let mut rng = seed_for_replica(909, id);
        let (mut block_h, mut block_tau) = (0.0, 0.0);
        let mut observe = |rec: &StepRecord| {
            let mixture = !rec.reflecting && rec.before.w.is_some_and(|w| w > boundary);
            if mixture {
                let dk = rec.after.k.unwrap() - rec.before.k.unwrap();
                let dh = rec.after.h.unwrap() - rec.before.h.unwrap();
                sum_dk += dk;
                sum_dh += dh;
                sum_tau += rec.dtau;
                k_steps.push((dk, rec.dtau));
                block_h += dh;
                block_tau += rec.dtau;
            }
            // Blocks close at stopping times, so each is an unbiased sample.
            if block_tau > 0.0 && (!mixture || block_tau >= BLOCK) {
                blocks.push((block_h, block_tau));
                (block_h, block_tau) = (0.0, 0.0);
            }
            if rec.after.tau >= TAU_END {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        };
        run_until_coupled_observed(&cfg, &mut rng, &mut observe).unwrap();
    }
    let k_drift = sum_dk / sum_tau;
    let k_se = k_steps
        .iter()
        .map(|(d, t)| (d - k_drift * t).powi(2))
        .sum::<f64>()
        .sqrt()
        / sum_tau;
    let h_drift = sum_dh / sum_tau;
    let h_se = (2.0 * sum_tau).sqrt() / sum_tau;
    let block_tau: f64 = blocks.iter().map(|b| b.1).sum();
    let h_var = blocks.iter().map(|(d, t)| (d - h_drift * t).powi(2)).sum::<f64>() / block_tau;
    let v_se = blocks
        .iter()
        .map(|(d, t)| ((d - h_drift * t).powi(2) - h_var * t).powi(2))
        .sum::<f64>()
        .sqrt()
        / block_tau;
    let z = [
        (k_drift + ALPHA_SQ / 2.0) / k_se,
        (h_drift + 1.0) / h_se,
        (h_var - 2.0) / v_se,
    ];
    outcome(
        z.iter().all(|z| z.abs() <= 3.0),
        format!(
            "dK/dtau {k_drift:.4} ± {k_se:.4} (target {:.2}), dH/dtau {h_drift:.4} ± {h_se:.4}, (dH)²/dtau {h_var:.4} ± {v_se:.4}",
            -ALPHA_SQ / 2.0
        ),
    )
}

fn areal_shift() -> Outcome {
    let mut rng = seed_for_replica(1010, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let a0 = normal_vector(2, &mut rng);
        let b0 = normal_vector(2, &mut rng);
        let shift = normal_vector(2, &mut rng) * 3.0;
        let mut plain = FullState::new(a0.clone(), b0.clone()).unwrap();
        let mut shifted = FullState::new(a0 + &shift, b0 + &shift).unwrap();
        let x0 = plain.separation();
        for _ in 0..200 {
            let da = normal_vector(2, &mut rng) * 0.1;
            let db = normal_vector(2, &mut rng) * 0.1;
            plain = apply_increments(&plain, &da, &db, 0.01);
            shifted = apply_increments(&shifted, &da, &db, 0.01);
        }
        let (base, moved) = (areal_difference(&plain), areal_difference(&shifted));
        let expected = shift[1] * x0[0] - shift[0] * x0[1];
        let err =
            (moved[(0, 1)] - base[(0, 1)] - expected).abs() / base[(0, 1)].abs().max(moved[(0, 1)].abs()).max(1.0);
        worst = worst.max(err);
    }
    outcome(
        worst <= 1e-10,
        format!("max relative error {worst:.2e} over 100 shifted paths"),
    )
}

fn kolmogorov_coupling() -> Outcome {
    let kol = |u0: f64, seed: u64| {
        let mut c = config(ExperimentKind::Kolmogorov);
        c.u0 = u0;
        c.v0 = Some(0.0);
        c.replicas = 500;
        c.seed = seed;
        run(&c)
    };
    let one = kol(1.0, 1111);
    let two = kol(2.0, 1111);
    let independent = kol(2.0, 1112);
    let ratio = median_of(&two) / median_of(&one);
    let indep_ratio = median_of(&independent) / median_of(&one);
    let all_coupled = one.summary.coupled_fraction == Some(1.0) && two.summary.coupled_fraction == Some(1.0);
    outcome(
        all_coupled && (ratio / 4.0 - 1.0).abs() <= 0.15,
        format!(
            "coupled {:.3} / {:.3}; median ratio {ratio:.4} with common seeds (independent seeds: {indep_ratio:.3})",
            one.summary.coupled_fraction.unwrap_or(0.0),
            two.summary.coupled_fraction.unwrap_or(0.0)
        ),
    )
}

fn morse_thue_sequence() -> Outcome {
    let bits = morse_thue(1 << 16).unwrap();
    let prefix = bits_to_string(&bits[..16]);
    let parity_ok = bits
        .iter()
        .enumerate()
        .all(|(n, &b)| u32::from(b) == n.count_ones() % 2);
    outcome(
        prefix == "0110100110010110" && parity_ok,
        format!("prefix {prefix}, popcount parity for n < 65536: {parity_ok}"),
    )
}

fn determinism() -> Outcome {
    let mut mismatched = Vec::new();
    for kind in ExperimentKind::ALL {
        let mut c = config(kind);
        c.seed = 1313;
        c.replicas = 48;
        match kind {
            ExperimentKind::FullCoupling => {
                c.w0 = 50.0;
                c.v0 = Some(1e-3);
                c.horizon = Some(1e-3);
            }
            ExperimentKind::ReducedCouplingDist => c.w0 = 100.0,
            ExperimentKind::ItoValidate => {
                c.cases = 4;
                c.replicas = 2000;
            }
            _ => {}
        }
        let csv: Vec<String> = [1, 4, 4]
            .iter()
            .map(|&w| run_experiment(&c, RunOptions { workers: Some(w) }).unwrap().csv())
            .collect();
        if csv[0] != csv[1] || csv[1] != csv[2] {
            mismatched.push(kind.as_str());
        }
    }
    outcome(
        mismatched.is_empty(),
        format!("CSV bytes differ for: {mismatched:?} (workers 1, 4, 4)"),
    )
}

fn main() {
    let mut failures = 0;
    let mut report = |name: &str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        if !o.pass {
            failures += 1;
        }
        println!(
            "{} {name}: {} [{:.1} s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    };
    report("euler-formula", &mut euler_formula);
    report("control-validity", &mut control_validity);
    report("planar-constants", &mut planar_constants);
    report("ito-system", &mut ito_system);
    report("dufresne-identity", &mut dufresne_identity);
    let baseline = run(&reduced_config(1.5, 10_000, 505));
    report("tail-index", &mut || tail_index(&baseline));
    report("scale-arbitration", &mut || scale_arbitration(&baseline));
    report("rotation-boundary", &mut rotation_boundary);
    report("full-vs-reduced", &mut full_vs_reduced);
    report("areal-shift", &mut areal_shift);
    report("kolmogorov-coupling", &mut kolmogorov_coupling);
    report("morse-thue", &mut morse_thue_sequence);
    report("determinism", &mut determinism);
    println!("acceptance: {} of 13 checks passed", 13 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
