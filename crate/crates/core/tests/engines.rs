use levy_area_coupling::controls::StrategyParams;
use levy_area_coupling::kolmogorov::{couple_kolmogorov, KolmogorovConfig};
use levy_area_coupling::reduced::{
    simulate_with_noise, step_reduced, PlanarCoefficients, ReducedRunConfig, ReducedState,
};
use levy_area_coupling::rng::{seed_for_replica, ReplicaRng};
use levy_area_coupling::sde::{run_until_coupled, FullCouplingConfig};
use levy_area_coupling::stats::ks_two_sample;
use rand::Rng;
use rand_distr::StandardNormal;

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

fn full_config(strategy: StrategyParams) -> FullCouplingConfig {
    // Tiny V₀ keeps W₀²V₀²·scaledT far inside the horizon despite the heavy tail.
    let mut config = FullCouplingConfig::from_ratio(strategy, 2, 1e-20, 50.0).unwrap();
    config.dt_max = 1e-4;
    config.horizon = 1e4;
    config.max_steps = 200_000;
    config
}

#[test]
fn reflection_synchronous_couples_almost_surely() {
    let config = full_config(StrategyParams::reflection_synchronous(1.5).unwrap());
    let coupled = (0..200)
        .filter(|&id| {
            run_until_coupled(&config, &mut seed_for_replica(3, id))
                .unwrap()
                .coupled
        })
        .count();
    assert!(coupled >= 190, "{coupled} of 200 coupled");
}

#[test]
fn pure_reflection_leaves_the_area_behind() {
    let mixed = full_config(StrategyParams::reflection_synchronous(1.5).unwrap());
    let pure = full_config(StrategyParams::pure_reflection());
    let (mut mixed_count, mut pure_count) = (0, 0);
    for id in 0..40 {
        mixed_count += run_until_coupled(&mixed, &mut seed_for_replica(4, id)).unwrap().coupled as usize;
        pure_count += run_until_coupled(&pure, &mut seed_for_replica(4, id)).unwrap().coupled as usize;
    }
    assert!(pure_count < mixed_count, "pure {pure_count} vs mixed {mixed_count}");
}

fn paired_noise(rng: &mut ReplicaRng, merge: bool) -> [f64; 2] {
    let mut pair = || {
        [
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        ]
    };
    if merge {
        let (a, b) = (pair(), pair());
        [(a[0] + b[0]) * FRAC_1_SQRT_2, (a[1] + b[1]) * FRAC_1_SQRT_2]
    } else {
        pair()
    }
}

#[test]
fn scaled_time_is_stable_under_halving_dtau() {
    // The coarse run sees sums of the fine run's normals, so both follow one
    // Brownian path and the KS distance measures discretization alone.
    let strategy = StrategyParams::reflection_synchronous(1.5).unwrap();
    let coarse = ReducedRunConfig::new(strategy, 1e3, 1e-2, 1e7);
    let fine = ReducedRunConfig { dtau: 5e-3, ..coarse };
    let run = |config: &ReducedRunConfig, merge: bool| -> Vec<f64> {
        (0..5000)
            .map(|id| {
                let mut rng = seed_for_replica(5, id);
                simulate_with_noise(config, || paired_noise(&mut rng, merge))
                    .unwrap()
                    .log_scaled_t
            })
            .collect()
    };
    let (d, _) = ks_two_sample(&run(&coarse, true), &run(&fine, false)).unwrap();
    assert!(d <= 0.02, "KS distance {d}");
}

#[test]
fn reduced_steps_match_requested_moments() {
    let coeffs = PlanarCoefficients {
        var_k: 1.7,
        var_h: 2.0,
        cov_kh: -0.9,
        drift_k: -0.6,
        drift_h: 0.4,
    };
    let dtau = 1e-2;
    let n = 100_000;
    let mut rng = seed_for_replica(6, 0);
    let start = ReducedState::new(0.0, 0.0);
    let steps: Vec<(f64, f64)> = (0..n)
        .map(|_| {
            let noise = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
            let next = step_reduced(&start, &coeffs, dtau, noise).unwrap();
            (next.k, next.h)
        })
        .collect();
    let mean = |f: &dyn Fn(&(f64, f64)) -> f64| steps.iter().map(f).sum::<f64>() / n as f64;
    let check = |name: &str, f: &dyn Fn(&(f64, f64)) -> f64, target: f64| {
        let m = mean(f);
        let var = steps.iter().map(|s| (f(s) - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        let z = (m - target) / (var / n as f64).sqrt();
        assert!(z.abs() < 3.0, "{name}: z = {z}");
    };
    check("drift K", &|s| s.0, coeffs.drift_k * dtau);
    check("drift H", &|s| s.1, coeffs.drift_h * dtau);
    let (mk, mh) = (coeffs.drift_k * dtau, coeffs.drift_h * dtau);
    check("var K", &|s| (s.0 - mk).powi(2), coeffs.var_k * dtau);
    check("var H", &|s| (s.1 - mh).powi(2), coeffs.var_h * dtau);
    check("cov KH", &|s| (s.0 - mk) * (s.1 - mh), coeffs.cov_kh * dtau);
}

#[test]
fn first_reduced_step_accumulates_a_quarter_dtau() {
    let coeffs = PlanarCoefficients {
        var_k: 1.0,
        var_h: 2.0,
        cov_kh: 0.0,
        drift_k: -0.5,
        drift_h: -1.0,
    };
    let next = step_reduced(&ReducedState::new(0.0, 0.0), &coeffs, 0.04, [0.3, -1.2]).unwrap();
    assert_eq!(next.t_accum, 0.01);
}

#[test]
fn kolmogorov_coupled_fraction_grows_with_horizon() {
    let horizons = [0.5, 5.0, 50.0, 1e3, 1e6, 1e12];
    let mut previous = 0;
    for horizon in horizons {
        let config = KolmogorovConfig::new(1.0, 0.0, 1e-4, horizon);
        let coupled = (0..200)
            .filter(|&id| {
                couple_kolmogorov(&config, &mut seed_for_replica(8, id))
                    .unwrap()
                    .coupled
            })
            .count();
        assert!(coupled >= previous, "horizon {horizon}: {coupled} < {previous}");
        previous = coupled;
    }
    assert_eq!(previous, 200);
}

#[test]
fn kolmogorov_from_rest_is_already_coupled() {
    let outcome = couple_kolmogorov(&KolmogorovConfig::new(0.0, 0.0, 1e-4, 1.0), &mut seed_for_replica(1, 0)).unwrap();
    assert!(outcome.coupled);
    assert_eq!(outcome.t_coupling, 0.0);
}
