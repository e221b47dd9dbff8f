use averaging_core::config_space::{Configuration, Domain, Point};
use averaging_core::environment::{EnvKind, EnvSpec};
use averaging_core::fp::{build_joint_generator, enumerate_space, evolve, DensityVector, EnvChain, Method, SiteLattice};
use averaging_core::logistic::{KernelFunction, KernelShape, ModelParams};
use averaging_core::sim::{simulate_coupled, InitialCondition, SimConfig};
use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn params() -> ModelParams {
    ModelParams {
        m0: 0.5,
        lambda0: 1.0,
        z: 2.0,
        delta: 0.1,
        a_plus: KernelFunction::density(KernelShape::Gaussian, 0.2, 1).unwrap(),
        a_minus: KernelFunction::new(KernelShape::Gaussian, 0.2, 0.2).unwrap(),
        kappa: KernelFunction::new(KernelShape::Tophat, 1.0, 0.5).unwrap(),
        psi: KernelFunction::new(KernelShape::Gaussian, 0.1, 0.2).unwrap(),
    }
}

fn joint_build(c: &mut Criterion) {
    let p = params();
    let sp = enumerate_space(8, 4).unwrap();
    let lat = SiteLattice::uniform(Domain::unit(1), 8).unwrap();
    let chain = EnvChain::one_site_glauber(Point(vec![0.3]), p.z).unwrap();
    c.bench_function("joint generator M8 N4", |b| {
        b.iter(|| build_joint_generator(black_box(&sp), &lat, &chain, &p, 0.01).unwrap())
    });
}

fn forward_evolve(c: &mut Criterion) {
    let p = params();
    let sp = enumerate_space(8, 4).unwrap();
    let lat = SiteLattice::uniform(Domain::unit(1), 8).unwrap();
    let chain = EnvChain::one_site_glauber(Point(vec![0.3]), p.z).unwrap();
    let g = build_joint_generator(&sp, &lat, &chain, &p, 0.1).unwrap().adjoint();
    let rho0 = DensityVector::point_mass(sp.len(), 1).product(chain.mu());
    let mut group = c.benchmark_group("evolve M8 N4 t=1");
    for (name, method) in [("uniformization", Method::Uniformization), ("rk", Method::RkAdaptive)] {
        group.bench_function(name, |b| b.iter(|| evolve(black_box(&rho0), &g, 1.0, method, 1e-10).unwrap()));
    }
    group.finish();
}

fn one_replica(c: &mut Criterion) {
    let p = params();
    let dom = Domain::unit(1);
    let env = EnvSpec::new(EnvKind::Resample, p.z, 1e-2).unwrap();
    let init = InitialCondition::Fixed(Configuration::from_points((0..5).map(|i| Point(vec![0.2 * i as f64])).collect()));
    let cfg = SimConfig::new(1.0, vec![1.0]);
    let mut seed = 0u64;
    c.bench_function("coupled replica t=1 eps=1e-2", |b| {
        b.iter(|| {
            seed += 1;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            simulate_coupled(&p, &env, &init, &cfg, &dom, &mut rng).unwrap()
        })
    });
}

criterion_group!(benches, joint_build, forward_evolve, one_replica);
criterion_main!(benches);
