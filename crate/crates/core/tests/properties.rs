use proptest::prelude::*;
use rand::RngCore;
use sq2lt::analytics::{
    self, identity_h_kl, identity_sigma_k, r_double_prime, r_double_prime_alternate,
    r_double_prime_direct, r_prime, r_prime_alternate, r_prime_direct, r_zero,
};
use sq2lt::model::{CapacityVector, Family, RngStream};
use sq2lt::oracle::TaggedModel;
use sq2lt::quadrature::{integrate, QuadOptions};

fn capacities(min_k: usize, max_k: usize) -> impl Strategy<Value = CapacityVector> {
    prop::collection::vec(0.1f64..20.0, min_k..=max_k).prop_map(|v| CapacityVector::new(v).unwrap())
}

fn family() -> impl Strategy<Value = Family> {
    prop::sample::select(Family::ALL.to_vec())
}

fn close(a: f64, b: f64, rel: f64, scale: f64) -> bool {
    (a - b).abs() <= rel * scale.max(a.abs()).max(b.abs())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn derivative_forms_agree(caps in capacities(2, 10), mean in 0.1f64..5.0) {
        let r0 = r_zero(&caps, mean).unwrap();
        let r1 = r_prime(&caps, mean).unwrap();
        prop_assert!(close(r1, r_prime_direct(&caps, mean).unwrap(), 1e-9, r0 * 1e-3));
        prop_assert!(close(r1, r_prime_alternate(&caps, mean).unwrap(), 1e-9, r0 * 1e-3));
        let r2 = r_double_prime(&caps, mean).unwrap();
        let scale = r0 * r0 * 1e-3;
        prop_assert!(close(r2, r_double_prime_direct(&caps, mean).unwrap(), 1e-9, scale));
        prop_assert!(close(r2, r_double_prime_alternate(&caps, mean).unwrap(), 1e-9, scale));
    }

    #[test]
    fn first_derivative_never_positive(caps in capacities(2, 12), mean in 0.1f64..5.0) {
        prop_assert!(r_prime(&caps, mean).unwrap() <= 0.0);
    }

    #[test]
    fn permutation_invariance(caps in capacities(2, 8), seed in any::<u64>()) {
        let mut v = caps.as_slice().to_vec();
        let mut rng = RngStream::new(seed, 0);
        for i in (1..v.len()).rev() {
            let j = (rng.next_u64() % (i as u64 + 1)) as usize;
            v.swap(i, j);
        }
        let shuffled = CapacityVector::new(v).unwrap();
        let a = analytics::LtDerivatives::new(&caps, 1.0).unwrap();
        let b = analytics::LtDerivatives::new(&shuffled, 1.0).unwrap();
        prop_assert!(close(a.r0, b.r0, 1e-13, 0.0));
        prop_assert!(close(a.r1, b.r1, 1e-9, a.r0 * 1e-6));
        prop_assert!(close(a.r2, b.r2, 1e-9, a.r0 * a.r0 * 1e-6));
    }

    #[test]
    fn scale_covariance(caps in capacities(2, 8), c in 0.25f64..4.0) {
        // R(λ) for capacities cC equals R(λ/c)/c, so R^(n) scales as c^-(n+1)
        let base = analytics::LtDerivatives::new(&caps, 1.0).unwrap();
        let scaled = analytics::LtDerivatives::new(&caps.scaled(c).unwrap(), 1.0).unwrap();
        prop_assert!(close(scaled.r0 * c, base.r0, 1e-12, 0.0));
        prop_assert!(close(scaled.r1 * c * c, base.r1, 1e-9, base.r0 * 1e-9));
        prop_assert!(close(scaled.r2 * c.powi(3), base.r2, 1e-9, base.r0 * base.r0 * 1e-9));
    }

    #[test]
    fn homogeneous_is_flat(k in 2usize..50, c in 0.01f64..100.0, mean in 0.1f64..5.0) {
        let caps = CapacityVector::homogeneous(k, c).unwrap();
        prop_assert_eq!(r_prime(&caps, mean).unwrap(), 0.0);
        prop_assert_eq!(r_double_prime(&caps, mean).unwrap(), 0.0);
    }

    #[test]
    fn identities_hold(caps in capacities(2, 8), pick in any::<(usize, usize)>()) {
        let k = pick.0 % caps.len();
        prop_assert!(identity_sigma_k(&caps, k).unwrap().holds(1e-12));
        let l = pick.1 % caps.len();
        if l != k {
            let pair = identity_h_kl(&caps, k, l).unwrap();
            prop_assert!(pair.h.holds(1e-12));
            prop_assert!(pair.sigma.holds(1e-12));
        }
    }

    #[test]
    fn tagged_forms_agree(
        caps in capacities(2, 7),
        fam in family(),
        s in -3.0f64..-0.001,
        gap in 0.001f64..3.0,
        sign in any::<bool>(),
    ) {
        let model = TaggedModel::new(&caps, &fam.unit_mean()).unwrap();
        let k = caps.len();
        for idx in 0..k {
            let a = model.h_k(s, idx).unwrap();
            let b = model.h_k_alternate(s, idx).unwrap();
            prop_assert!((a - b).abs() <= 1e-13 * a.abs().max(1.0));
        }
        // covers s < t < 0 and s < 0 < t
        let t = if sign { s + gap } else { gap };
        if t != 0.0 && t != s {
            let compact = model.rhat2(s, t).unwrap();
            let expanded = model.rhat2_expanded(s, t).unwrap();
            prop_assert!((compact - expanded).abs() <= 1e-12 * compact.abs().max(1.0),
                "compact {} expanded {}", compact, expanded);
        }
    }

    #[test]
    fn survival_monotone(fam in family(), xs in prop::collection::vec(-1.0f64..8.0, 2..200)) {
        let dist = fam.unit_mean();
        let mut xs = xs;
        xs.sort_by(f64::total_cmp);
        for w in xs.windows(2) {
            prop_assert!(dist.survival(w[1]) <= dist.survival(w[0]));
        }
    }
}

#[test]
fn survival_integrates_to_mean() {
    for fam in Family::ALL {
        let dist = fam.unit_mean();
        let upper = dist.tail_bound(1e-16);
        let opts = QuadOptions {
            rel_tol: 1e-9,
            ..Default::default()
        };
        let r = integrate(|x| dist.survival(x), 0.0, upper, &dist.atoms(), opts).unwrap();
        let rel = (r.value - dist.mean()).abs() / dist.mean();
        assert!(rel < 1e-7, "{}: {} vs {}", fam.name(), r.value, dist.mean());
    }
}

#[test]
fn survival_grid_monotone() {
    for fam in Family::ALL {
        let dist = fam.unit_mean();
        let mut prev = f64::INFINITY;
        for i in 0..10_000 {
            let x = -1.0 + 9.0 * i as f64 / 9_999.0;
            let s = dist.survival(x);
            assert!(s <= prev, "{} at {x}", fam.name());
            prev = s;
        }
    }
}
