use averaging_core::config_space::{sample_poisson, torus_distance, verify_ibp, Configuration};
use averaging_core::stats::chi2_gof;
use averaging_core::{Domain, Point};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Discrete, Poisson};

fn point(d: usize, side: f64) -> impl Strategy<Value = Point> {
    prop::collection::vec(0.0..side, d).prop_map(Point)
}

proptest! {
    #[test]
    fn torus_distance_is_a_metric(
        (d, side, x, y, z) in (1usize..4, 0.5f64..5.0).prop_flat_map(|(d, side)| {
            (Just(d), Just(side), point(d, side), point(d, side), point(d, side))
        })
    ) {
        let dom = Domain::new(d, side).unwrap();
        let dxy = torus_distance(&dom, &x, &y).unwrap();
        let dyx = torus_distance(&dom, &y, &x).unwrap();
        let dxz = torus_distance(&dom, &x, &z).unwrap();
        let dzy = torus_distance(&dom, &z, &y).unwrap();
        prop_assert_eq!(dxy, dyx);
        prop_assert!(dxy <= dxz + dzy + 1e-12);
        prop_assert!(dxy <= side * (d as f64).sqrt() / 2.0 + 1e-12);
        prop_assert_eq!(torus_distance(&dom, &x, &x).unwrap(), 0.0);
    }

    /// Splitting by a mask and its complement partitions the configuration.
    #[test]
    fn split_partitions(n in 0usize..12, mask in any::<u64>()) {
        let c = Configuration::from_points((0..n).map(|i| Point(vec![i as f64 * 0.05])).collect());
        let (a, b) = c.split(mask);
        prop_assert_eq!(a.len() + b.len(), n);
        prop_assert!(a.iter().all(|p| c.contains(p) && !b.contains(p)));
    }
}

#[test]
fn poisson_counts_follow_poisson_law() {
    let dom = Domain::new(2, 1.5).unwrap();
    let z = 1.2;
    let mean = z * dom.volume();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let kmax = 12;
    let mut observed = vec![0u64; kmax + 1];
    for _ in 0..20_000 {
        let c = sample_poisson(&dom, z, &mut rng).unwrap();
        observed[c.len().min(kmax)] += 1;
        assert!(c.iter().all(|p| dom.contains(p)));
    }
    let law = Poisson::new(mean).unwrap();
    let mut probs: Vec<f64> = (0..kmax).map(|k| law.pmf(k as u64)).collect();
    probs.push(1.0 - probs.iter().sum::<f64>());
    let r = chi2_gof(&observed, &probs).unwrap();
    assert!(r.p_value > 1e-3, "{r:?}");
}

#[test]
fn ibp_identity_in_two_dimensions() {
    // G(ξ, η) = Π_{x∈ξ} u(x) Π_{y∈η} v(y): both sides equal exp(∫u + ∫v)
    let dom = Domain::new(2, 1.0).unwrap();
    let u = |p: &Point| 0.5 + 0.25 * p.0[0];
    let v = |p: &Point| 0.3 * (1.0 + p.0[1] * p.0[0]);
    let g = |xi: &Configuration, eta: &Configuration| {
        xi.iter().map(u).product::<f64>() * eta.iter().map(v).product::<f64>()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let r = verify_ibp(g, &dom, 50_000, &mut rng).unwrap();
    let exact = (0.625f64 + 0.3 * 1.25).exp();
    assert!(r.pass, "{r:?}");
    assert!((r.lhs - exact).abs() < 4.0 * r.lhs_std_error, "{} vs {exact}", r.lhs);
    assert!((r.rhs - exact).abs() < 4.0 * r.rhs_std_error, "{} vs {exact}", r.rhs);
}
