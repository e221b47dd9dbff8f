//! Ergodic environment processes with invariant Poisson law, sped up by 1/ε.
//!
//! * `free_glauber`: immigration at rate `z·|Λ|` (uniform position) and unit
//!   per-point death; reversible with respect to Poisson(z).
//! * `resample`: at unit rate the whole configuration is redrawn from Poisson(z).
//! * `frozen`: no dynamics; the non-ergodic control.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::config_space::{sample_poisson, Configuration, Domain, Point};
use crate::error::{invalid, Error, Result};
use crate::stats::{weighted_batch_estimate, BatchEstimate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    FreeGlauber,
    Resample,
    Frozen,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub z: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvState {
    pub gamma: Configuration,
    pub clock: f64,
}

/// What an environment event did to `γ`.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvChange {
    /// A point was appended.
    Birth(Point),
    /// The point was removed (by `swap_remove` at the given index).
    Death(usize, Point),
    /// The whole configuration changed; the previous one is returned.
    Replace(Configuration),
}

impl EnvSpec {
    pub fn new(kind: EnvKind, z: f64, epsilon: f64) -> Result<Self> {
        let s = Self { kind, z, epsilon };
        s.check()?;
        Ok(s)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.z >= 0.0 && self.z.is_finite()) {
            return Err(invalid("z", format!("must be nonnegative, got {}", self.z)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(invalid("epsilon", "epsilon must be positive"));
        }
        Ok(())
    }

    /// Total event rate in state `gamma`, including the `1/ε` speed-up.
    pub fn rate(&self, gamma: &Configuration, dom: &Domain) -> f64 {
        match self.kind {
            EnvKind::FreeGlauber => (self.z * dom.volume() + gamma.len() as f64) / self.epsilon,
            EnvKind::Resample => 1.0 / self.epsilon,
            EnvKind::Frozen => 0.0,
        }
    }

    /// Applies one event, chosen according to the current rates.
    pub fn fire<R: Rng + ?Sized>(&self, gamma: &mut Configuration, dom: &Domain, rng: &mut R) -> EnvChange {
        match self.kind {
            EnvKind::FreeGlauber => {
                let immigration = self.z * dom.volume();
                let u = rng.random::<f64>() * (immigration + gamma.len() as f64);
                if u < immigration || gamma.is_empty() {
                    let w = dom.uniform_point(rng);
                    gamma.push(w.clone());
                    EnvChange::Birth(w)
                } else {
                    let i = rng.random_range(0..gamma.len());
                    EnvChange::Death(i, gamma.swap_remove(i))
                }
            }
            EnvKind::Resample => {
                let fresh = sample_poisson(dom, self.z, rng).expect("validated intensity");
                EnvChange::Replace(std::mem::replace(gamma, fresh))
            }
            EnvKind::Frozen => EnvChange::Replace(gamma.clone()),
        }
    }
}

/// Draws `γ` from the invariant Poisson(z) law, with the clock at zero.
pub fn env_invariant_sample<R: Rng + ?Sized>(spec: &EnvSpec, dom: &Domain, rng: &mut R) -> Result<EnvState> {
    spec.check()?;
    Ok(EnvState {
        gamma: sample_poisson(dom, spec.z, rng)?,
        clock: 0.0,
    })
}

/// Advances to the next environment event. A frozen environment returns
/// `dt = ∞` and an unchanged state.
pub fn env_step<R: Rng + ?Sized>(state: &EnvState, spec: &EnvSpec, dom: &Domain, rng: &mut R) -> Result<(f64, EnvState)> {
    spec.check()?;
    let rate = spec.rate(&state.gamma, dom);
    if rate == 0.0 {
        return Ok((f64::INFINITY, state.clone()));
    }
    let dt = Exp::new(rate).expect("positive rate").sample(rng);
    let mut next = state.clone();
    spec.fire(&mut next.gamma, dom, rng);
    next.clock += dt;
    Ok((dt, next))
}

/// Number of time batches used for the confidence interval.
pub const ERGODIC_BATCHES: usize = 20;

/// Time average `(1/T)∫₀ᵀ f(γ_t) dt` from a stationary start, with a
/// batch-means interval over [`ERGODIC_BATCHES`] equal time blocks.
pub fn env_ergodic_average<F, R>(mut f: F, spec: &EnvSpec, dom: &Domain, horizon: f64, rng: &mut R) -> Result<BatchEstimate>
where
    F: FnMut(&Configuration) -> f64,
    R: Rng + ?Sized,
{
    if spec.kind == EnvKind::Frozen {
        return Err(Error::NonErgodic);
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(invalid("T", format!("horizon must be positive, got {horizon}")));
    }
    let mut state = env_invariant_sample(spec, dom, rng)?;
    let width = horizon / ERGODIC_BATCHES as f64;
    let mut batch = [0.0; ERGODIC_BATCHES];
    let mut value = f(&state.gamma);
    let mut t = 0.0;
    while t < horizon {
        let (dt, next) = env_step(&state, spec, dom, rng)?;
        let end = (t + dt).min(horizon);
        // spread the holding interval [t, end) across batches
        let mut s = t;
        while s < end {
            let b = ((s / width) as usize).min(ERGODIC_BATCHES - 1);
            let stop = end.min((b + 1) as f64 * width);
            batch[b] += value * (stop - s);
            if stop <= s {
                break;
            }
            s = stop;
        }
        t += dt;
        state = next;
        value = f(&state.gamma);
    }
    let means: Vec<f64> = batch.iter().map(|b| b / width).collect();
    let mean = batch.iter().sum::<f64>() / horizon;
    Ok(weighted_batch_estimate(mean, &means))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_intensity_is_empty() {
        let spec = EnvSpec::new(EnvKind::FreeGlauber, 0.0, 1.0).unwrap();
        let s = env_invariant_sample(&spec, &Domain::unit(2), &mut rng(1)).unwrap();
        assert!(s.gamma.is_empty());
        assert_eq!(s.clock, 0.0);
    }

    #[test]
    fn empty_glauber_always_immigrates() {
        let spec = EnvSpec::new(EnvKind::FreeGlauber, 1.0, 1.0).unwrap();
        let dom = Domain::unit(1);
        let mut r = rng(2);
        for _ in 0..100 {
            let start = EnvState {
                gamma: Configuration::empty(),
                clock: 0.0,
            };
            let (dt, next) = env_step(&start, &spec, &dom, &mut r).unwrap();
            assert!(dt > 0.0);
            assert_eq!(next.gamma.len(), 1);
            assert_eq!(next.clock, dt);
        }
    }

    #[test]
    fn resample_mean_holding_time() {
        let spec = EnvSpec::new(EnvKind::Resample, 2.0, 0.01).unwrap();
        let dom = Domain::unit(1);
        let mut r = rng(3);
        let mut s = env_invariant_sample(&spec, &dom, &mut r).unwrap();
        let n = 10_000;
        let mut total = 0.0;
        for _ in 0..n {
            let (dt, next) = env_step(&s, &spec, &dom, &mut r).unwrap();
            total += dt;
            s = next;
        }
        let mean = total / n as f64;
        let sigma = 0.01 / (n as f64).sqrt();
        assert!((mean - 0.01).abs() < 3.0 * sigma, "{mean}");
    }

    #[test]
    fn frozen_is_a_sentinel_and_non_ergodic() {
        let spec = EnvSpec::new(EnvKind::Frozen, 1.0, 1.0).unwrap();
        let dom = Domain::unit(1);
        let s = env_invariant_sample(&spec, &dom, &mut rng(4)).unwrap();
        let (dt, next) = env_step(&s, &spec, &dom, &mut rng(5)).unwrap();
        assert!(dt.is_infinite());
        assert_eq!(next, s);
        assert_eq!(
            env_ergodic_average(|g| g.len() as f64, &spec, &dom, 1.0, &mut rng(6)),
            Err(Error::NonErgodic)
        );
    }

    #[test]
    fn constant_functional_is_exact() {
        let spec = EnvSpec::new(EnvKind::FreeGlauber, 2.0, 1.0).unwrap();
        let e = env_ergodic_average(|_| 1.5, &spec, &Domain::unit(1), 50.0, &mut rng(7)).unwrap();
        assert!((e.mean - 1.5).abs() < 1e-12);
        assert!(e.std_error < 1e-12);
    }

    #[test]
    fn count_average_near_intensity() {
        let spec = EnvSpec::new(EnvKind::FreeGlauber, 2.0, 1.0).unwrap();
        let e = env_ergodic_average(|g| g.len() as f64, &spec, &Domain::unit(1), 1000.0, &mut rng(8)).unwrap();
        assert!((e.mean - 2.0).abs() < e.ci, "{e:?}");
    }

    #[test]
    fn invalid_specs() {
        assert!(EnvSpec::new(EnvKind::Resample, 1.0, 0.0).is_err());
        assert!(EnvSpec::new(EnvKind::Resample, -1.0, 1.0).is_err());
        let json = serde_json::to_string(&EnvSpec::new(EnvKind::FreeGlauber, 1.0, 0.5).unwrap()).unwrap();
        assert_eq!(json, r#"{"kind":"free_glauber","z":1.0,"epsilon":0.5}"#);
    }
}
