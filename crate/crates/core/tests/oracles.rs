use std::time::Instant;

use sq2lt::analytics::{r_double_prime, r_prime};
use sq2lt::model::{CapacityVector, Family, ServiceDistribution};
use sq2lt::oracle::{mc_tagged_response, TaggedModel, TaggedScenario};

fn scenario1() -> CapacityVector {
    let mut v = vec![2.0; 5];
    v.extend([10.0; 5]);
    CapacityVector::new(v).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn quadrature_reproduces_closed_forms() {
    let start = Instant::now();
    for caps in [scenario1(), CapacityVector::new(vec![1.0, 2.0]).unwrap()] {
        for fam in Family::ALL {
            let dist = fam.unit_mean();
            let model = TaggedModel::new(&caps, &dist).unwrap();
            let q1 = model.first_derivative_quadrature(1e-9).unwrap();
            let c1 = r_prime(&caps, dist.mean()).unwrap();
            assert!(
                rel(q1, c1) < 1e-6,
                "{} K={}: {q1} vs {c1}",
                fam.name(),
                caps.len()
            );
            let q2 = model.second_derivative_quadrature(1e-6).unwrap();
            let c2 = r_double_prime(&caps, dist.mean()).unwrap();
            assert!(
                rel(q2, c2) < 1e-3,
                "{} K={}: {q2} vs {c2}",
                fam.name(),
                caps.len()
            );
        }
    }
    eprintln!("quadrature suite: {:?}", start.elapsed());
}

#[test]
fn busy_probability_integrates_to_mean_service() {
    // ∫ P(C_k t + σ > 0) dt over t < 0 is E[σ]/C_k
    let caps = scenario1();
    for fam in Family::ALL {
        let model = TaggedModel::new(&caps, &fam.unit_mean()).unwrap();
        for k in [0, 9] {
            let v = model.busy_probability_integral(k, 1e-10).unwrap();
            assert!(
                rel(v, 1.0 / caps.get(k)) < 1e-8,
                "{} k={k}: {v}",
                fam.name()
            );
        }
    }
}

fn check_cell(scn: &TaggedScenario, samples: u64, seed: u64) {
    let est = mc_tagged_response(scn, samples, seed);
    let closed = scn.closed_form().unwrap();
    let z = (est.assignment.mean - closed) / est.assignment.std_error().max(1e-300);
    assert!(
        z.abs() < 4.0,
        "arrivals {:?}: mc {} closed {closed} z {z}",
        scn.arrivals(),
        est.assignment.mean
    );
    assert!(est.response.mean >= est.assignment.mean - 1e-12);
}

#[test]
fn monte_carlo_matches_closed_forms_in_every_regime() {
    let caps = CapacityVector::new(vec![1.0, 2.0, 4.0]).unwrap();
    let dist = ServiceDistribution::exponential(1.0).unwrap();
    let cells: [&[f64]; 7] = [
        &[],
        &[-0.3],
        &[0.4],
        &[-0.5, -0.2],
        &[-0.4, 0.3],
        &[0.2, 0.6],
        &[-2.0, -1.5],
    ];
    for (i, cell) in cells.iter().enumerate() {
        let scn = TaggedScenario::new(cell.to_vec(), &caps, &dist).unwrap();
        check_cell(&scn, 200_000, 100 + i as u64);
    }
}

#[test]
fn waiting_shows_up_only_in_full_response() {
    // two recent jobs on a two-server system keep both servers busy
    let caps = CapacityVector::new(vec![1.0, 1.0]).unwrap();
    let dist = ServiceDistribution::deterministic(1.0).unwrap();
    let scn = TaggedScenario::new(vec![-0.2, -0.1], &caps, &dist).unwrap();
    let est = mc_tagged_response(&scn, 10_000, 5);
    assert!((est.assignment.mean - 1.0).abs() < 1e-12);
    assert!(est.response.mean > 1.5);
}

#[test]
fn monte_carlo_is_reproducible() {
    let caps = scenario1();
    let dist = Family::Hyperexponential.unit_mean();
    let scn = TaggedScenario::new(vec![-0.1, -0.05], &caps, &dist).unwrap();
    let a = mc_tagged_response(&scn, 50_000, 77);
    let b = mc_tagged_response(&scn, 50_000, 77);
    assert_eq!(a, b);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let c = pool.install(|| mc_tagged_response(&scn, 50_000, 77));
    assert_eq!(a, c);
}
