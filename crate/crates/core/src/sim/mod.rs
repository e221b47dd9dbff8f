//! Event-driven simulation of the logistic system in a moving environment.

mod engine;
mod ensemble;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config_space::{sample_poisson, Configuration, Domain, Point};
use crate::environment::{EnvChange, EnvSpec};
use crate::error::{invalid, Result};
use crate::fp::{EnvChain, SiteLattice};

pub use engine::{simulate, simulate_averaged, simulate_coupled, RateCache, AUDIT_EVERY, AUDIT_TOL};
pub use ensemble::{
    compare_ensembles, ensemble_summary, estimate_moment, record_values, run_ensemble, write_ensemble_csv,
    DistanceReport, EnsembleSummary, Observable, RecordSummary,
};

/// Default population cap.
pub const DEFAULT_MAX_POPULATION: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub horizon: f64,
    pub record_times: Vec<f64>,
    #[serde(default = "default_cap")]
    pub max_population: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub delta: f64,
}

fn default_cap() -> usize {
    DEFAULT_MAX_POPULATION
}

impl SimConfig {
    pub fn new(horizon: f64, record_times: Vec<f64>) -> Self {
        Self {
            horizon,
            record_times,
            max_population: DEFAULT_MAX_POPULATION,
            seed: 0,
            delta: 0.0,
        }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(invalid("horizon", format!("must be finite and nonnegative, got {}", self.horizon)));
        }
        if self.record_times.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(invalid("record_times", "must be sorted"));
        }
        if self.record_times.iter().any(|&t| !(0.0..=self.horizon).contains(&t)) {
            return Err(invalid("record_times", "must lie in [0, horizon]"));
        }
        if self.max_population == 0 {
            return Err(invalid("max_population", "must be at least 1"));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(invalid("delta", format!("must be nonnegative, got {}", self.delta)));
        }
        Ok(())
    }
}

/// Event tallies of one trajectory.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EventCounts {
    pub births: u64,
    pub deaths: u64,
    /// Lattice births onto occupied sites or beyond the cap.
    pub suppressed: u64,
    /// System events rejected by the damping.
    pub damped: u64,
    pub environment: u64,
    pub audits: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub seed: u64,
    pub replica: u64,
    pub record_times: Vec<f64>,
    /// One configuration per record time reached (fewer after an explosion).
    pub states: Vec<Configuration>,
    pub counts: EventCounts,
    pub exploded: bool,
}

impl Trajectory {
    /// Configuration recorded at time `t`, if reached.
    pub fn at(&self, t: f64) -> Option<&Configuration> {
        let i = self.record_times.iter().position(|&s| s == t)?;
        self.states.get(i)
    }
}

/// Initial-configuration sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialCondition {
    Fixed(Configuration),
    Poisson { z: f64 },
}

impl InitialCondition {
    pub fn sample<R: Rng + ?Sized>(&self, dom: &Domain, rng: &mut R) -> Result<Configuration> {
        match self {
            Self::Fixed(c) => Ok(c.clone()),
            Self::Poisson { z } => sample_poisson(dom, *z, rng),
        }
    }
}

/// Where offspring may land.
#[derive(Debug, Clone, PartialEq)]
pub enum Habitat {
    /// Offspring displaced continuously by `a⁺`, wrapped onto the torus.
    Continuum(Domain),
    /// Offspring placed on a lattice site with probability proportional to
    /// `a⁺`; births onto occupied sites or beyond `cap` points are
    /// suppressed. Matches the truncated generators exactly.
    Lattice { lattice: SiteLattice, cap: usize },
}

impl Habitat {
    pub fn domain(&self) -> &Domain {
        match self {
            Self::Continuum(d) => d,
            Self::Lattice { lattice, .. } => lattice.domain(),
        }
    }
}

/// Effect of an environment event on the cached rates.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvUpdate {
    Added(Point),
    Removed(Point),
    Replaced,
}

/// An environment the engine can drive.
pub trait Environment {
    fn gamma(&self) -> &Configuration;
    /// Total event rate, already sped up by `1/ε`.
    fn rate(&self) -> f64;
    fn fire<R: Rng + ?Sized>(&mut self, rng: &mut R) -> EnvUpdate;
}

/// Continuum environment following an [`EnvSpec`].
#[derive(Debug, Clone)]
pub struct ContinuumEnv {
    pub spec: EnvSpec,
    pub domain: Domain,
    pub gamma: Configuration,
}

impl Environment for ContinuumEnv {
    fn gamma(&self) -> &Configuration {
        &self.gamma
    }

    fn rate(&self) -> f64 {
        self.spec.rate(&self.gamma, &self.domain)
    }

    fn fire<R: Rng + ?Sized>(&mut self, rng: &mut R) -> EnvUpdate {
        match self.spec.fire(&mut self.gamma, &self.domain, rng) {
            EnvChange::Birth(w) => EnvUpdate::Added(w),
            EnvChange::Death(_, w) => EnvUpdate::Removed(w),
            EnvChange::Replace(_) => EnvUpdate::Replaced,
        }
    }
}

/// Finite environment chain at speed `1/ε`; `ε = ∞` freezes it.
#[derive(Debug, Clone)]
pub struct ChainEnv<'a> {
    chain: &'a EnvChain,
    state: usize,
    epsilon: f64,
}

impl<'a> ChainEnv<'a> {
    pub fn new(chain: &'a EnvChain, state: usize, epsilon: f64) -> Result<Self> {
        if state >= chain.len() {
            return Err(invalid("state", format!("{state} out of range {}", chain.len())));
        }
        if !(epsilon > 0.0) {
            return Err(invalid("epsilon", "epsilon must be positive"));
        }
        Ok(Self { chain, state, epsilon })
    }

    /// Starts from a draw of the invariant law `μ`.
    pub fn stationary<R: Rng + ?Sized>(chain: &'a EnvChain, epsilon: f64, rng: &mut R) -> Result<Self> {
        let state = sample_index(chain.mu(), rng);
        Self::new(chain, state, epsilon)
    }

    pub fn state(&self) -> usize {
        self.state
    }
}

fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

impl Environment for ChainEnv<'_> {
    fn gamma(&self) -> &Configuration {
        self.chain.state(self.state)
    }

    fn rate(&self) -> f64 {
        if self.epsilon.is_infinite() {
            0.0
        } else {
            self.chain.exit_rate(self.state) / self.epsilon
        }
    }

    fn fire<R: Rng + ?Sized>(&mut self, rng: &mut R) -> EnvUpdate {
        let k = self.state;
        let weights: Vec<f64> = (0..self.chain.len())
            .map(|l| if l == k { 0.0 } else { self.chain.rate(k, l) })
            .collect();
        self.state = sample_index(&weights, rng);
        EnvUpdate::Replaced
    }
}
