//! Assembly of the truncated system, joint and averaged generators.
//!
//! On the lattice a particle at site `x` dies at `m(x,γ) + Σ a⁻(x−y)` and
//! gives birth at `λ(x,γ)`, the offspring landing on site `y` with
//! probability proportional to `a⁺(x−y)`. Births onto occupied sites and
//! births beyond the cap `N` are suppressed: the mass stays in place, so
//! every truncated generator is conservative. Damping multiplies all rates
//! out of `η` by `e^{-δ q(γ,η)}` where `q` counts suppressed births too.

use crate::config_space::Configuration;
use crate::error::{invalid, Error, Result};
use crate::logistic::{self, ModelParams};

use super::{EnvChain, Generator, SiteLattice, TruncatedSpace};

/// How the environment is averaged out.
#[derive(Debug, Clone, Copy)]
pub enum EnvAverage<'a> {
    /// μ-average over a finite environment chain, damping applied per state.
    Chain(&'a EnvChain),
    /// Poisson(z) environment through the closed-form intensities `m̄`, `λ̄`.
    /// Only defined without damping.
    Poisson,
}

/// Site-indexed kernel tables for one lattice and parameter set.
#[derive(Debug, Clone)]
pub struct LatticeKernels {
    competition: Vec<Vec<f64>>,
    dispersal: Vec<Vec<f64>>,
}

impl LatticeKernels {
    pub fn new(lat: &SiteLattice, p: &ModelParams) -> Self {
        let dom = lat.domain();
        let m = lat.len();
        let mut competition = vec![vec![0.0; m]; m];
        let mut dispersal = vec![vec![0.0; m]; m];
        for x in 0..m {
            for y in 0..m {
                let r = dom.dist(&lat.site(x).0, &lat.site(y).0);
                if x != y {
                    competition[x][y] = p.a_minus.eval(r);
                }
                dispersal[x][y] = p.a_plus.eval(r);
            }
            let total: f64 = dispersal[x].iter().sum();
            if total > 0.0 {
                dispersal[x].iter_mut().for_each(|w| *w /= total);
            }
        }
        Self {
            competition,
            dispersal,
        }
    }

    /// Probability that an offspring of site `x` lands on site `y`.
    pub fn dispersal(&self, x: usize, y: usize) -> f64 {
        self.dispersal[x][y]
    }

    pub fn competition(&self, x: usize, y: usize) -> f64 {
        self.competition[x][y]
    }
}

/// Per-site environment contributions `(Σκ, Σψ)` for a fixed `γ`.
fn env_tables(lat: &SiteLattice, gamma: &Configuration, p: &ModelParams) -> (Vec<f64>, Vec<f64>) {
    let dom = lat.domain();
    lat.sites()
        .iter()
        .map(|x| (logistic::env_mortality(&x.0, gamma, p, dom), logistic::env_fecundity(&x.0, gamma, p, dom)))
        .unzip()
}

fn check_shapes(sp: &TruncatedSpace, lat: &SiteLattice, p: &ModelParams) -> Result<()> {
    if sp.sites() != lat.len() {
        return Err(Error::DimensionMismatch {
            expected: lat.len(),
            got: sp.sites(),
        });
    }
    if !(p.delta >= 0.0) {
        return Err(invalid("delta", format!("must be nonnegative, got {}", p.delta)));
    }
    Ok(())
}

/// Emits every jump of the damped system for environment `gamma`.
fn system_jumps(
    sp: &TruncatedSpace,
    kernels: &LatticeKernels,
    env_m: &[f64],
    env_l: &[f64],
    p: &ModelParams,
    weight: f64,
    offset: usize,
    out: &mut Vec<(usize, usize, f64)>,
) {
    let m = sp.sites();
    let mut death = vec![0.0; m];
    let mut birth = vec![0.0; m];
    let mut occupied: Vec<usize> = Vec::with_capacity(m);
    for (i, &mask) in sp.masks().iter().enumerate() {
        occupied.clear();
        occupied.extend((0..m).filter(|&b| mask >> b & 1 == 1));
        let mut q = 0.0;
        for &x in &occupied {
            let comp: f64 = occupied.iter().map(|&y| kernels.competition[x][y]).sum();
            death[x] = p.m0 + env_m[x] + comp;
            birth[x] = p.lambda0 + env_l[x];
            q += death[x] + birth[x];
        }
        let damp = weight * logistic::damping(q, p.delta);
        if damp == 0.0 {
            continue;
        }
        for &x in &occupied {
            let to = sp.index(mask & !(1 << x)).expect("subset of a state is a state");
            out.push((offset + i, offset + to, death[x] * damp));
        }
        if occupied.len() < sp.cap() {
            for y in (0..m).filter(|&y| mask >> y & 1 == 0) {
                let rate: f64 = occupied.iter().map(|&x| birth[x] * kernels.dispersal[x][y]).sum();
                if rate > 0.0 {
                    let to = sp.index(mask | 1 << y).expect("state below the cap");
                    out.push((offset + i, offset + to, rate * damp));
                }
            }
        }
    }
}

/// Backward generator of the system in the fixed environment `gamma`.
/// Its adjoint is the forward operator acting on densities.
pub fn build_system_generator(
    sp: &TruncatedSpace,
    lat: &SiteLattice,
    gamma: &Configuration,
    p: &ModelParams,
) -> Result<Generator> {
    check_shapes(sp, lat, p)?;
    let kernels = LatticeKernels::new(lat, p);
    let (env_m, env_l) = env_tables(lat, gamma, p);
    let mut jumps = Vec::new();
    system_jumps(sp, &kernels, &env_m, &env_l, p, 1.0, 0, &mut jumps);
    Generator::from_transitions(sp.len(), &jumps, &[])
}

/// Backward generator on `(η, k)` pairs, indexed `k·|space| + index(η)`:
/// the system moves under `γ_k` and the environment jumps at `Q_E / ε`.
pub fn build_joint_generator(
    sp: &TruncatedSpace,
    lat: &SiteLattice,
    env: &EnvChain,
    p: &ModelParams,
    epsilon: f64,
) -> Result<Generator> {
    check_shapes(sp, lat, p)?;
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(invalid("epsilon", format!("must be positive, got {epsilon}")));
    }
    let s = sp.len();
    let kernels = LatticeKernels::new(lat, p);
    let mut jumps = Vec::new();
    for k in 0..env.len() {
        let (env_m, env_l) = env_tables(lat, env.state(k), p);
        system_jumps(sp, &kernels, &env_m, &env_l, p, 1.0, k * s, &mut jumps);
        for l in 0..env.len() {
            let r = env.rate(k, l);
            if l != k && r > 0.0 {
                let r = r / epsilon;
                jumps.extend((0..s).map(|i| (k * s + i, l * s + i, r)));
            }
        }
    }
    Generator::from_transitions(s * env.len(), &jumps, &[])
}

/// Backward generator of the averaged kernel `K̄_δ = ∫ e^{-δq(γ,·)} K(γ,·) dμ(γ)`.
/// The average is taken of the damped rates, never the other way round.
pub fn build_averaged_generator(
    sp: &TruncatedSpace,
    lat: &SiteLattice,
    env: EnvAverage<'_>,
    p: &ModelParams,
) -> Result<Generator> {
    check_shapes(sp, lat, p)?;
    let kernels = LatticeKernels::new(lat, p);
    let mut jumps = Vec::new();
    match env {
        EnvAverage::Chain(chain) => {
            for k in 0..chain.len() {
                let (env_m, env_l) = env_tables(lat, chain.state(k), p);
                system_jumps(sp, &kernels, &env_m, &env_l, p, chain.mu()[k], 0, &mut jumps);
            }
        }
        EnvAverage::Poisson => {
            if p.delta != 0.0 {
                return Err(invalid(
                    "delta",
                    "the closed-form Poisson average is only available without damping",
                ));
            }
            let avg = p.averaged(lat.domain().dim);
            let zeros = vec![0.0; lat.len()];
            system_jumps(sp, &kernels, &zeros, &zeros, &avg, 1.0, 0, &mut jumps);
        }
    }
    Generator::from_transitions(sp.len(), &jumps, &[])
}

/// Lattice analogues of `m̄(x)` and `λ̄(x)` for a chain environment.
pub fn lattice_averaged_intensities(lat: &SiteLattice, env: &EnvChain, p: &ModelParams) -> (Vec<f64>, Vec<f64>) {
    let mut m_bar = vec![p.m0; lat.len()];
    let mut l_bar = vec![p.lambda0; lat.len()];
    for k in 0..env.len() {
        let (em, el) = env_tables(lat, env.state(k), p);
        for x in 0..lat.len() {
            m_bar[x] += env.mu()[k] * em[x];
            l_bar[x] += env.mu()[k] * el[x];
        }
    }
    (m_bar, l_bar)
}
