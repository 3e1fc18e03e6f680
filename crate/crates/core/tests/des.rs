use sq2lt::analytics::LtDerivatives;
use sq2lt::model::{CapacityVector, Family, RngStream, ScenarioConfig, ServiceDistribution};
use sq2lt::sim::{
    for_each_cycle, mg1_reference, simulate, simulate_replication, sweep, SimOptions,
};

fn config(
    caps: Vec<f64>,
    dist: ServiceDistribution,
    d: usize,
    runs: usize,
    bpr: usize,
) -> ScenarioConfig {
    ScenarioConfig {
        capacities: CapacityVector::new(caps).unwrap(),
        distribution: dist,
        d,
        lambda_grid: vec![0.5],
        runs,
        busy_periods_per_run: bpr,
        seed: 2024,
    }
}

#[test]
fn single_server_matches_pollaczek_khinchine() {
    for (fam, exact) in [
        (Family::Exponential, 2.0),
        (Family::Deterministic, 1.5),
        (Family::Hyperexponential, 2.5),
    ] {
        let dist = fam.unit_mean();
        assert_eq!(mg1_reference(0.5, &dist, 1.0).unwrap(), exact);
        let scn = config(vec![1.0], dist, 1, 10, 10_000);
        let est = simulate(&scn, 0.5).unwrap();
        let window = est.half_width_95.max(0.02 * exact);
        assert!(
            (est.mean_response - exact).abs() <= window,
            "{}: {} ± {}",
            fam.name(),
            est.mean_response,
            est.half_width_95
        );
        assert_eq!(est.runs, 10);
        assert!(est.half_width_95 > 0.0);
    }
}

#[test]
fn doubling_cycles_shrinks_the_standard_error() {
    let scn = config(vec![1.0], Family::Exponential.unit_mean(), 1, 1, 0);
    let (mut short, mut long) = (0.0, 0.0);
    for trial in 0..10 {
        let mut a = RngStream::new(trial, 0);
        let mut b = RngStream::new(trial, 1);
        short += simulate_replication(&scn, 0.5, 20_000, &mut a, SimOptions::default())
            .unwrap()
            .ratio_std_error;
        long += simulate_replication(&scn, 0.5, 40_000, &mut b, SimOptions::default())
            .unwrap()
            .ratio_std_error;
    }
    let ratio = long / short;
    assert!((0.6..=0.85).contains(&ratio), "ratio {ratio}");
}

#[test]
fn every_cycle_holds_at_least_one_job() {
    let scn = config(
        vec![2.0, 2.0, 10.0, 10.0],
        Family::Weibull.unit_mean(),
        2,
        1,
        0,
    );
    let mut rng = RngStream::new(8, 0);
    let mut seen = 0u64;
    let rep = for_each_cycle(&scn, 3.0, 5_000, &mut rng, |c| {
        assert!(c.jobs >= 1);
        seen += c.jobs;
    })
    .unwrap();
    assert_eq!(seen, rep.jobs);
    assert!(rep.jobs > rep.cycles);
}

#[test]
fn homogeneous_scenario_rises_from_the_light_traffic_limit() {
    let mut scn = config(
        vec![10.0; 10],
        Family::Exponential.unit_mean(),
        2,
        10,
        5_000,
    );
    scn.lambda_grid = vec![0.1, 10.0, 30.0];
    let rows = sweep(&scn).unwrap();
    assert!((rows[0].mean_response - 0.1).abs() <= rows[0].half_width_95.max(1e-3));
    assert!(rows[1].mean_response > rows[0].upper());
    assert!(rows[2].lower() > rows[1].upper());
}

#[test]
fn light_traffic_agreement_on_scenario_one() {
    let mut caps = vec![2.0; 5];
    caps.extend([10.0; 5]);
    for fam in Family::ALL {
        let scn = config(caps.clone(), fam.unit_mean(), 2, 10, 20_000);
        let lt = LtDerivatives::new(&scn.capacities, 1.0).unwrap();
        let est = simulate(&scn, 0.25).unwrap();
        let target = lt.approx(0.25);
        let window = est.half_width_95.max(0.05 * target);
        assert!(
            (est.mean_response - target).abs() <= window,
            "{}: sim {} approx {target}",
            fam.name(),
            est.mean_response
        );
    }
}

#[test]
fn sampling_means_match_moments() {
    for fam in Family::ALL {
        let dist = fam.unit_mean();
        let mut rng = RngStream::new(31, 4);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| dist.sample(&mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let m2 = xs.iter().map(|x| x * x).sum::<f64>() / n as f64;
        let sd = (dist.moment(2).unwrap() - 1.0).sqrt();
        assert!(
            (mean - 1.0).abs() <= 4.0 * sd / (n as f64).sqrt() + 1e-15,
            "{}",
            fam.name()
        );
        let m4_bound = dist.moment(3).unwrap().max(1.0) * 10.0;
        assert!(
            (m2 - dist.moment(2).unwrap()).abs() <= 4.0 * (m4_bound / n as f64).sqrt(),
            "{}",
            fam.name()
        );
        assert!(xs.iter().all(|&x| x >= 0.0));
    }
}

#[test]
fn simulation_is_independent_of_thread_count() {
    let scn = config(
        vec![2.0, 10.0, 10.0],
        Family::Hyperexponential.unit_mean(),
        2,
        6,
        2_000,
    );
    let a = simulate(&scn, 2.0).unwrap();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let b = pool.install(|| simulate(&scn, 2.0)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.mean_response.to_bits(), b.mean_response.to_bits());
}
