use averaging_core::fp::{enumerate_space, build_averaged_generator, EnvAverage, Generator, SiteLattice};
use averaging_core::logistic::{KernelFunction, KernelShape, ModelParams};
use averaging_core::semigroup::*;
use averaging_core::Domain;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn dense_solve(g: &Generator, a: f64, nu: &[f64]) -> Vec<f64> {
    let d = g.adjoint().to_dense();
    let n = d.len();
    let m = DMatrix::from_fn(n, n, |i, j| if i == j { a - d[i][j] } else { -d[i][j] });
    m.lu().solve(&DVector::from_column_slice(nu)).unwrap().iter().copied().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn series_matches_dense_resolvent(
        n in 2usize..25,
        jumps in prop::collection::vec((0usize..25, 0usize..25, 0.0f64..4.0), 1..60),
        losses in prop::collection::vec((0usize..25, 0.0f64..2.0), 0..4),
        a in 0.5f64..3.0,
    ) {
        let jumps: Vec<_> = jumps.into_iter().filter(|(i, j, _)| i != j && *i < n && *j < n).collect();
        let losses: Vec<_> = losses.into_iter().filter(|(i, _)| *i < n).collect();
        let g = Generator::from_transitions(n, &jumps, &losses).unwrap();
        let sg = SplitGenerator::new(&g).unwrap();
        let nu = vec![1.0 / n as f64; n];
        let s = resolvent_series(&sg, a, 1.0, &nu, 3000).unwrap();
        let exact = dense_solve(&g, a, &nu);
        let diff: f64 = s.values.iter().zip(&exact).map(|(x, y)| (x - y).abs()).sum();
        prop_assert!(diff < 1e-8, "{diff}");
        prop_assert!(diff <= s.tail_bound + 1e-12);
        // sub-stochastic: a‖R(a)ν‖ ≤ ‖ν‖, with equality when nothing is lost
        let mass = a * s.values.iter().sum::<f64>();
        prop_assert!(mass <= 1.0 + 1e-10);
        if losses.iter().all(|l| l.1 == 0.0) {
            prop_assert!((mass - 1.0).abs() < 1e-8);
        }
    }
}

#[test]
fn logistic_instance_is_conservative() {
    let p = ModelParams {
        m0: 0.5,
        lambda0: 1.0,
        z: 1.0,
        delta: 0.0,
        a_plus: KernelFunction::density(KernelShape::Gaussian, 0.2, 1).unwrap(),
        a_minus: KernelFunction::new(KernelShape::Gaussian, 0.5, 0.2).unwrap(),
        kappa: KernelFunction::new(KernelShape::Gaussian, 0.2, 0.2).unwrap(),
        psi: KernelFunction::zero(),
    };
    let sp = enumerate_space(5, 3).unwrap();
    let lat = SiteLattice::uniform(Domain::unit(1), 5).unwrap();
    let g = build_averaged_generator(&sp, &lat, EnvAverage::Poisson, &p).unwrap();
    let sg = SplitGenerator::new(&g).unwrap();
    let nu: Vec<f64> = (0..sp.len()).map(|i| (i + 1) as f64).collect();
    assert!(sg.mass_balance(&nu).abs() < 1e-12);
    let s = resolvent_series(&sg, 2.0, 1.0, &nu, 2000).unwrap();
    let exact = dense_solve(&g, 2.0, &nu);
    assert!(s.values.iter().zip(&exact).all(|(x, y)| (x - y).abs() < 1e-9));
}

#[test]
fn explosive_birth_chain_keeps_its_defect() {
    let family: Vec<Truncation> = (4..=9)
        .map(|k| birth_death_truncation(1 << k, |n| (n * n) as f64, |_| 0.0).unwrap())
        .collect();
    let r = stochasticity_probe(&family, 1.5, 1, 1e-6).unwrap();
    assert_eq!(r.verdict, "possible explosion");
    assert!(r.monotone);
    // P(explosion before 1.5) from one particle: Σ 1/n² = π²/6 is the mean
    // explosion time, so a sizable fraction has exploded
    let last = r.rows.last().unwrap().defect;
    assert!(last > 0.3 && last < 0.9, "{last}");
    let spread = r.rows[r.rows.len() - 2].defect - last;
    assert!(spread < 0.02, "defects still moving: {:?}", r.rows);
}

#[test]
fn linear_chain_defect_vanishes() {
    let family: Vec<Truncation> = (3..=8)
        .map(|k| birth_death_truncation(1 << k, |n| 1.2 * n as f64, |n| n as f64).unwrap())
        .collect();
    let r = stochasticity_probe(&family, 1.0, 2, 1e-8).unwrap();
    assert_eq!(r.verdict, "stochastic");
    assert!(r.rows.last().unwrap().defect < 1e-10);
    assert!(r.rows[0].defect > r.rows.last().unwrap().defect);
}
