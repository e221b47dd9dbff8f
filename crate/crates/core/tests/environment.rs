use averaging_core::environment::{env_ergodic_average, env_invariant_sample, env_step, EnvKind, EnvSpec, EnvState};
use averaging_core::stats::{chi2_gof, ks_two_sample};
use averaging_core::Domain;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Discrete, Poisson};

fn poisson_probs(mean: f64, kmax: usize) -> Vec<f64> {
    let law = Poisson::new(mean).unwrap();
    let mut p: Vec<f64> = (0..kmax).map(|k| law.pmf(k as u64)).collect();
    p.push(1.0 - p.iter().sum::<f64>());
    p
}

/// Advance to time `t` and report the state then.
fn state_at(mut s: EnvState, spec: &EnvSpec, dom: &Domain, t: f64, rng: &mut ChaCha8Rng) -> EnvState {
    loop {
        let (dt, next) = env_step(&s, spec, dom, rng).unwrap();
        if s.clock + dt > t {
            return s;
        }
        s = next;
    }
}

#[test]
fn glauber_preserves_poisson_law_from_empty_start() {
    // started empty, |γ_t| is Poisson(z(1 − e^{−t/ε}))
    let dom = Domain::unit(1);
    let spec = EnvSpec::new(EnvKind::FreeGlauber, 3.0, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let t = 0.4;
    let kmax = 10;
    let mut obs = vec![0u64; kmax + 1];
    for _ in 0..10_000 {
        let s = state_at(EnvState { gamma: Default::default(), clock: 0.0 }, &spec, &dom, t, &mut rng);
        obs[s.gamma.len().min(kmax)] += 1;
    }
    let mean = 3.0 * (1.0 - (-t / 0.5f64).exp());
    let r = chi2_gof(&obs, &poisson_probs(mean, kmax)).unwrap();
    assert!(r.p_value > 1e-3, "{r:?}");
}

#[test]
fn invariant_law_is_stationary() {
    let dom = Domain::new(2, 1.0).unwrap();
    let kmax = 8;
    for kind in [EnvKind::FreeGlauber, EnvKind::Resample] {
        let spec = EnvSpec::new(kind, 2.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut obs = vec![0u64; kmax + 1];
        for _ in 0..10_000 {
            let s0 = env_invariant_sample(&spec, &dom, &mut rng).unwrap();
            let s = state_at(s0, &spec, &dom, 1.3, &mut rng);
            obs[s.gamma.len().min(kmax)] += 1;
        }
        let r = chi2_gof(&obs, &poisson_probs(2.0, kmax)).unwrap();
        assert!(r.p_value > 1e-3, "{kind:?}: {r:?}");
    }
}

#[test]
fn epsilon_rescales_time() {
    // holding times at speed 1/ε, multiplied by 1/ε, have the ε = 1 law
    let dom = Domain::unit(1);
    let sample = |eps: f64, seed: u64| {
        let spec = EnvSpec::new(EnvKind::FreeGlauber, 1.5, eps).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = env_invariant_sample(&spec, &dom, &mut rng).unwrap();
        (0..5000)
            .map(|_| {
                let (dt, next) = env_step(&s, &spec, &dom, &mut rng).unwrap();
                s = next;
                dt / eps
            })
            .collect::<Vec<f64>>()
    };
    let r = ks_two_sample(&sample(1.0, 3), &sample(1e-3, 4)).unwrap();
    assert!(r.p_value > 1e-3, "{r:?}");
    let slow = sample(1.0, 5).iter().map(|v| v * 2.0).collect::<Vec<_>>();
    assert!(ks_two_sample(&sample(1.0, 6), &slow).unwrap().p_value < 1e-3);
}

#[test]
fn ergodic_average_converges_at_root_t_rate() {
    let dom = Domain::unit(1);
    let spec = EnvSpec::new(EnvKind::FreeGlauber, 2.0, 1.0).unwrap();
    let horizons = [10.0, 40.0, 160.0, 640.0];
    let reps = 200;
    let rms: Vec<f64> = horizons
        .iter()
        .enumerate()
        .map(|(h, &t)| {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + h as u64);
            let ss: f64 = (0..reps)
                .map(|_| {
                    let e = env_ergodic_average(|g| g.len() as f64, &spec, &dom, t, &mut rng).unwrap();
                    (e.mean - 2.0).powi(2)
                })
                .sum();
            (ss / reps as f64).sqrt()
        })
        .collect();
    let xs: Vec<f64> = horizons.iter().map(|t: &f64| t.ln()).collect();
    let ys: Vec<f64> = rms.iter().map(|r| r.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 4.0, ys.iter().sum::<f64>() / 4.0);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    assert!((slope + 0.5).abs() < 0.1, "slope {slope}, rms {rms:?}");
}
