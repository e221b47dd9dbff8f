//! Truncated forward-equation numerics against a dense matrix exponential,
//! plus structural properties of the built generators.

use averaging_core::fp::*;
use averaging_core::logistic::{averaged_rates, generic_lyapunov_check, DriftBound, KernelFunction, KernelShape, ModelParams};
use averaging_core::{Domain, Point};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn dense_forward(g: &Generator) -> DMatrix<f64> {
    let d = g.oriented(Orientation::Forward).to_dense();
    DMatrix::from_fn(d.len(), d.len(), |i, j| d[i][j])
}

fn expm_apply(g: &Generator, x: &[f64], t: f64) -> Vec<f64> {
    let v = (dense_forward(g) * t).exp() * DVector::from_column_slice(x);
    v.iter().copied().collect()
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn logistic(delta: f64) -> ModelParams {
    ModelParams {
        m0: 0.05,
        lambda0: 0.1,
        z: 1.0,
        delta,
        a_plus: KernelFunction::density(KernelShape::Gaussian, 0.2, 1).unwrap(),
        a_minus: KernelFunction::new(KernelShape::Gaussian, 0.05, 0.2).unwrap(),
        kappa: KernelFunction::new(KernelShape::Gaussian, 0.1, 0.2).unwrap(),
        psi: KernelFunction::new(KernelShape::Gaussian, 0.03, 0.2).unwrap(),
    }
}

fn random_generator() -> impl Strategy<Value = (Generator, Vec<f64>)> {
    (2usize..40).prop_flat_map(|n| {
        let jumps = prop::collection::vec((0..n, 0..n, 0.0f64..5.0), 0..4 * n);
        let losses = prop::collection::vec((0..n, 0.0f64..1.0), 0..3);
        let x = prop::collection::vec(0.0f64..1.0, n);
        (Just(n), jumps, losses, x).prop_map(|(n, jumps, losses, x)| {
            let jumps: Vec<_> = jumps.into_iter().filter(|(i, j, _)| i != j).collect();
            let g = Generator::from_transitions(n, &jumps, &losses).unwrap();
            let total: f64 = x.iter().sum::<f64>().max(1e-12);
            (g, x.iter().map(|v| v / total).collect())
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn uniformization_matches_dense_expm((g, x) in random_generator(), t in 0.0f64..3.0) {
        let fwd = g.adjoint();
        let rho = evolve(&DensityVector::new(x.clone()).unwrap(), &fwd, t, Method::Uniformization, 1e-11).unwrap();
        let oracle = expm_apply(&g, &x, t);
        prop_assert!(l1(rho.values(), &oracle) < 1e-8, "{}", l1(rho.values(), &oracle));
    }

    #[test]
    fn rk_matches_dense_expm((g, x) in random_generator(), t in 0.0f64..2.0) {
        let fwd = g.adjoint();
        let rho = evolve(&DensityVector::new(x.clone()).unwrap(), &fwd, t, Method::RkAdaptive, 1e-10).unwrap();
        prop_assert!(l1(rho.values(), &expm_apply(&g, &x, t)) < 1e-8);
    }

    /// `⟨f, e^{tG*}ρ⟩ = ⟨e^{tG}f, ρ⟩`
    #[test]
    fn forward_backward_duality((g, x) in random_generator(), t in 0.0f64..2.0, seed in 0u64..1000) {
        let f: Vec<f64> = (0..g.dim()).map(|i| ((i as u64 * 7919 + seed) % 13) as f64 / 13.0).collect();
        let rho = propagate(&x, &g.adjoint(), t, Method::Uniformization, 1e-12).unwrap();
        let pf = propagate(&f, &g, t, Method::Uniformization, 1e-12).unwrap();
        let lhs: f64 = f.iter().zip(&rho).map(|(a, b)| a * b).sum();
        let rhs: f64 = pf.iter().zip(&x).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }

    /// Mass is conserved without cemetery losses, and the evolution stays a density.
    #[test]
    fn conservative_evolution_keeps_mass(
        m0 in 0.0f64..1.0, l0 in 0.0f64..1.0, delta in 0.0f64..1.0, t in 0.0f64..2.0,
    ) {
        let p = ModelParams { m0, lambda0: l0, delta, ..logistic(0.0) };
        let sp = enumerate_space(4, 3).unwrap();
        let lat = SiteLattice::uniform(Domain::unit(1), 4).unwrap();
        let chain = EnvChain::one_site_glauber(Point(vec![0.5]), 1.0).unwrap();
        let g = build_joint_generator(&sp, &lat, &chain, &p, 0.1).unwrap();
        prop_assert!(g.conservation_defect() < 1e-12);
        let rho0 = DensityVector::point_mass(sp.len(), 1).product(chain.mu());
        let rho = evolve(&rho0, &g.adjoint(), t, Method::Uniformization, 1e-10).unwrap();
        prop_assert!((rho.mass() - 1.0).abs() < 1e-10);
        prop_assert!(rho.values().iter().all(|&v| v >= 0.0));
    }

    /// Smaller ε never moves the joint law further from the averaged one
    /// once ε is in the asymptotic regime.
    #[test]
    fn averaging_error_monotone_in_epsilon(
        kappa in 0.0f64..0.5, psi in 0.0f64..0.5, m0 in 0.0f64..0.5,
    ) {
        let p = ModelParams {
            m0,
            kappa: KernelFunction::new(KernelShape::Gaussian, kappa, 0.2).unwrap(),
            psi: KernelFunction::new(KernelShape::Gaussian, psi, 0.2).unwrap(),
            ..logistic(0.1)
        };
        let sp = enumerate_space(3, 2).unwrap();
        let lat = SiteLattice::uniform(Domain::unit(1), 3).unwrap();
        let chain = EnvChain::one_site_glauber(Point(vec![0.0]), 1.0).unwrap();
        let rho0 = DensityVector::point_mass(sp.len(), sp.index(0b001).unwrap());
        let grid: Vec<f64> = (0..=4).map(|i| i as f64 / 4.0).collect();
        let table = averaging_error(&sp, &lat, &chain, &p, &[1e-2, 1e-3, 1e-4], &grid, &rho0, Solver::default()).unwrap();
        let sup = table.sup_errors();
        prop_assert!(sup[1] <= sup[0] + 1e-9 && sup[2] <= sup[1] + 1e-9, "{sup:?}");
    }
}

#[test]
fn delta_sweep_matches_dense_oracle() {
    let sp = enumerate_space(3, 2).unwrap();
    let lat = SiteLattice::uniform(Domain::unit(1), 3).unwrap();
    let chain = EnvChain::one_site_glauber(Point(vec![0.0]), 1.0).unwrap();
    let rho0 = DensityVector::point_mass(sp.len(), sp.index(0b001).unwrap());
    let grid = [0.0, 0.5, 1.0];
    let p = logistic(0.0);
    let table = delta_error(&sp, &lat, EnvAverage::Chain(&chain), &p, &[0.3], &grid, &rho0, Solver::default()).unwrap();
    let undamped = build_averaged_generator(&sp, &lat, EnvAverage::Chain(&chain), &p).unwrap();
    let damped = build_averaged_generator(&sp, &lat, EnvAverage::Chain(&chain), &logistic(0.3)).unwrap();
    for row in &table.rows {
        let a = expm_apply(&undamped, rho0.values(), row.t);
        let b = expm_apply(&damped, rho0.values(), row.t);
        assert!((row.error - l1(&a, &b)).abs() < 1e-9, "{row:?}");
    }
}

#[test]
fn lyapunov_drift_on_averaged_logistic_instance() {
    let sp = enumerate_space(3, 2).unwrap();
    let lat = SiteLattice::uniform(Domain::unit(1), 3).unwrap();
    let p = logistic(0.0);
    let avg = averaged_rates(&p, 1);
    let c = (avg.lambda_bar - avg.m_bar).max(0.0);
    let g = build_averaged_generator(&sp, &lat, EnvAverage::Poisson, &p).unwrap();
    let r = generic_lyapunov_check(&g, &sp.sizes(), DriftBound::Linear { c }).unwrap();
    assert!(r.holds, "{r:?}");
    // a negative constant is too small: births from the singletons violate it
    let strict = generic_lyapunov_check(&g, &sp.sizes(), DriftBound::Linear { c: -1.0 }).unwrap();
    assert!(!strict.holds);
}

#[test]
fn joint_with_frozen_environment_is_block_diagonal() {
    let sp = enumerate_space(3, 2).unwrap();
    let lat = SiteLattice::uniform(Domain::unit(1), 3).unwrap();
    let chain = EnvChain::one_site_resample(Point(vec![0.0]), 1.0).unwrap();
    let p = logistic(0.1);
    // ε → ∞ leaves each environment block to its own system generator
    let joint = build_joint_generator(&sp, &lat, &chain, &p, 1e12).unwrap();
    let s = sp.len();
    for (k, gamma) in chain.states().iter().enumerate() {
        let sys = build_system_generator(&sp, &lat, gamma, &p).unwrap();
        for i in 0..s {
            for (j, r) in sys.row(i) {
                assert!((joint.rate(k * s + i, k * s + j) - r).abs() < 1e-15);
            }
        }
    }
}
