//! Experiment configuration: JSON schema, defaults and validation.

use std::fmt;

use averaging_core::fp::{Method, MAX_SITES, MAX_STATES};
use averaging_core::logistic::{KernelFunction, KernelShape, ModelParams};
use averaging_core::Domain;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    IbpTest,
    Lyapunov,
    AveragingSweep,
    DeltaSweep,
    McCompare,
    MomentBound,
    ResolventCheck,
    StochasticityProbe,
    NormBound,
    McClosedForm,
    EnvErgodic,
}

impl Experiment {
    pub const ALL: [Experiment; 11] = [
        Self::IbpTest,
        Self::Lyapunov,
        Self::AveragingSweep,
        Self::DeltaSweep,
        Self::McCompare,
        Self::MomentBound,
        Self::ResolventCheck,
        Self::StochasticityProbe,
        Self::NormBound,
        Self::McClosedForm,
        Self::EnvErgodic,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::IbpTest => "ibp-test",
            Self::Lyapunov => "lyapunov",
            Self::AveragingSweep => "averaging-sweep",
            Self::DeltaSweep => "delta-sweep",
            Self::McCompare => "mc-compare",
            Self::MomentBound => "moment-bound",
            Self::ResolventCheck => "resolvent-check",
            Self::StochasticityProbe => "stochasticity-probe",
            Self::NormBound => "norm-bound",
            Self::McClosedForm => "mc-closed-form",
            Self::EnvErgodic => "env-ergodic",
        }
    }

    fn needs_model(&self) -> bool {
        !matches!(self, Self::IbpTest | Self::ResolventCheck | Self::StochasticityProbe | Self::McClosedForm)
    }

    fn needs_truncation(&self) -> bool {
        matches!(
            self,
            Self::AveragingSweep | Self::DeltaSweep | Self::McCompare | Self::MomentBound | Self::NormBound
        )
    }

    fn needs_env(&self) -> bool {
        matches!(
            self,
            Self::AveragingSweep | Self::DeltaSweep | Self::McCompare | Self::NormBound | Self::EnvErgodic
        )
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainBlock {
    pub dim: usize,
    pub side: f64,
}

impl Default for DomainBlock {
    fn default() -> Self {
        Self { dim: 1, side: 1.0 }
    }
}

/// A radial kernel given either by its amplitude or by its total mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub shape: KernelShape,
    pub range: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass: Option<f64>,
}

impl KernelSpec {
    fn resolve(&self, dim: usize) -> Result<KernelFunction, String> {
        if !(self.range > 0.0 && self.range.is_finite()) {
            return Err(format!("range must be positive, got {}", self.range));
        }
        match (self.amplitude, self.mass) {
            (Some(a), None) => KernelFunction::new(self.shape, a, self.range).map_err(|e| e.to_string()),
            (None, Some(m)) => {
                if !(m >= 0.0 && m.is_finite()) {
                    return Err(format!("mass must be nonnegative, got {m}"));
                }
                let unit = KernelFunction::density(self.shape, self.range, dim).map_err(|e| e.to_string())?;
                Ok(KernelFunction {
                    amplitude: m * unit.amplitude,
                    ..unit
                })
            }
            _ => Err("give exactly one of `amplitude` or `mass`".into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub m0: f64,
    pub lambda0: f64,
    #[serde(default)]
    pub z: f64,
    #[serde(default)]
    pub delta: f64,
    pub a_plus: KernelSpec,
    #[serde(default)]
    pub a_minus: Option<KernelSpec>,
    #[serde(default)]
    pub kappa: Option<KernelSpec>,
    #[serde(default)]
    pub psi: Option<KernelSpec>,
}

impl ModelBlock {
    pub fn resolve(&self, dim: usize) -> Result<ModelParams, Violation> {
        let kernel = |name: &str, k: &Option<KernelSpec>| match k {
            Some(k) => k
                .resolve(dim)
                .map_err(|m| Violation::error(format!("model.{name}"), m)),
            None => Ok(KernelFunction::zero()),
        };
        let p = ModelParams {
            m0: self.m0,
            lambda0: self.lambda0,
            z: self.z,
            delta: self.delta,
            a_plus: kernel("a_plus", &Some(self.a_plus))?,
            a_minus: kernel("a_minus", &self.a_minus)?,
            kappa: kernel("kappa", &self.kappa)?,
            psi: kernel("psi", &self.psi)?,
        };
        p.check(dim).map_err(|e| match e {
            averaging_core::Error::InvalidParameter { name, reason } => {
                Violation::error(format!("model.{name}"), reason)
            }
            other => Violation::error("model", other.to_string()),
        })?;
        Ok(p)
    }

    fn kernels(&self) -> impl Iterator<Item = (&'static str, KernelSpec)> + '_ {
        [
            ("a_plus", Some(self.a_plus)),
            ("a_minus", self.a_minus),
            ("kappa", self.kappa),
            ("psi", self.psi),
        ]
        .into_iter()
        .filter_map(|(n, k)| k.map(|k| (n, k)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvBlockKind {
    /// Immigration–death environment; a one-site chain on lattices.
    FreeGlauber,
    /// Full redraw from the invariant law at unit rate.
    Resample,
    /// Poisson-averaged intensities; only meaningful for averaged quantities.
    Poisson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvBlock {
    pub kind: EnvBlockKind,
    /// Defaults to `model.z`.
    #[serde(default)]
    pub z: Option<f64>,
    #[serde(default = "one")]
    pub epsilon: f64,
    /// Environment site for lattice chains; defaults to the origin.
    #[serde(default)]
    pub site: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationBlock {
    /// Lattice sites per dimension.
    #[serde(rename = "M")]
    pub m: usize,
    /// Population cap.
    #[serde(rename = "N")]
    pub n: usize,
    /// Environment chain size; checked against the chain when given.
    #[serde(rename = "K", default)]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    #[serde(default)]
    pub epsilon: Vec<f64>,
    #[serde(default)]
    pub delta: Vec<f64>,
    /// Environment intensities, one parameter set each.
    #[serde(default)]
    pub z: Vec<f64>,
    /// Truncation sizes for the probes.
    #[serde(default)]
    pub sizes: Vec<usize>,
    #[serde(default = "one")]
    pub horizon: f64,
    #[serde(default = "eleven")]
    pub points: usize,
}

impl Default for SweepBlock {
    fn default() -> Self {
        Self {
            epsilon: Vec::new(),
            delta: Vec::new(),
            z: Vec::new(),
            sizes: Vec::new(),
            horizon: 1.0,
            points: 11,
        }
    }
}

impl SweepBlock {
    /// `points` equally spaced times on `[0, horizon]`.
    pub fn t_grid(&self) -> Vec<f64> {
        if self.points <= 1 {
            return vec![self.horizon];
        }
        let n = self.points - 1;
        (0..=n).map(|i| self.horizon * i as f64 / n as f64).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedBlock {
    #[serde(default = "default_seed")]
    pub base: u64,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
}

impl Default for SeedBlock {
    fn default() -> Self {
        Self {
            base: default_seed(),
            replicas: default_replicas(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    /// Overridden by `--out` and `AVERAGING_OUT_DIR`.
    #[serde(default)]
    pub dir: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    #[serde(default)]
    pub method: Method,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

impl Default for SolverBlock {
    fn default() -> Self {
        Self {
            method: Method::Uniformization,
            tol: default_tol(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiChoice {
    Constant,
    /// `1 + |x|²`
    Quadratic,
}

/// Experiment-specific knobs; each has a default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Options {
    /// Monte Carlo samples for the integration-by-parts check.
    #[serde(default)]
    pub samples: Option<usize>,
    /// Initially occupied lattice sites.
    #[serde(default)]
    pub init_sites: Option<Vec<usize>>,
    /// Drift constant of the Lyapunov check; defaults to `max(0, β)`.
    #[serde(default)]
    pub c: Option<f64>,
    #[serde(default)]
    pub phi: Option<PhiChoice>,
    /// Grid points per dimension of the Lyapunov check.
    #[serde(default)]
    pub grid: Option<usize>,
    #[serde(default)]
    pub quadrature_nodes: Option<usize>,
    /// Pass threshold on the error at the smallest sweep parameter.
    #[serde(default)]
    pub threshold: Option<f64>,
    /// Minimum log–log slope of the δ sweep.
    #[serde(default)]
    pub min_slope: Option<f64>,
    /// Resolvent parameter `a`.
    #[serde(default)]
    pub a: Option<f64>,
    #[serde(default)]
    pub terms: Option<usize>,
    /// Probe time.
    #[serde(default)]
    pub t: Option<f64>,
    /// Per-capita birth and death rates of the linear probe chain.
    #[serde(default)]
    pub linear_birth: Option<f64>,
    #[serde(default)]
    pub linear_death: Option<f64>,
    /// Initial population of the closed-form simulations.
    #[serde(default)]
    pub initial: Option<usize>,
    /// Point at which the ergodic average of the mortality is taken.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub domain: DomainBlock,
    #[serde(default)]
    pub model: Option<ModelBlock>,
    #[serde(default)]
    pub env: Option<EnvBlock>,
    #[serde(default)]
    pub truncation: Option<TruncationBlock>,
    #[serde(default)]
    pub sweep: SweepBlock,
    #[serde(default)]
    pub seeds: SeedBlock,
    #[serde(default)]
    pub output: OutputBlock,
    #[serde(default)]
    pub solver: SolverBlock,
    #[serde(default)]
    pub options: Options,
}

fn one() -> f64 {
    1.0
}
fn eleven() -> usize {
    11
}
fn default_seed() -> u64 {
    1
}
fn default_replicas() -> usize {
    10_000
}
fn default_tol() -> f64 {
    1e-10
}

/// One problem found in a configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
    /// Warnings are reported but do not stop a run.
    pub warning: bool,
}

impl Violation {
    pub fn error(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
            warning: false,
        }
    }

    pub fn warning(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            warning: true,
            ..Self::error(path, message)
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let level = if self.warning { "warning" } else { "error" };
        write!(f, "{level}: {}: {}", self.path, self.message)
    }
}

/// A parsed configuration together with the digest of its source.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub sha256: String,
}

/// SHA-256 of the canonical (key-sorted, compact) JSON form, so the digest
/// ignores whitespace and key order but nothing else.
pub fn config_digest(value: &serde_json::Value) -> String {
    let canonical = serde_json::to_string(value).expect("JSON values serialize");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

/// Parses JSON text. Schema errors carry the offending field path.
pub fn parse_config(text: &str) -> Result<LoadedConfig, Violation> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Violation::error("$", format!("not valid JSON: {e}")))?;
    let config = ExperimentConfig::deserialize(&value).map_err(|e| schema_violation(&value, e))?;
    Ok(LoadedConfig {
        sha256: config_digest(&value),
        config,
    })
}

/// serde's messages name the field but not where it sits; find the block by
/// deserializing each top-level entry on its own.
fn schema_violation(value: &serde_json::Value, err: serde_json::Error) -> Violation {
    let Some(obj) = value.as_object() else {
        return Violation::error("$", "configuration must be a JSON object");
    };
    macro_rules! probe {
        ($key:literal, $ty:ty) => {
            if let Some(v) = obj.get($key) {
                if let Err(e) = <$ty>::deserialize(v) {
                    return Violation::error($key, e.to_string());
                }
            }
        };
    }
    probe!("experiment", Experiment);
    probe!("domain", DomainBlock);
    probe!("model", ModelBlock);
    probe!("env", EnvBlock);
    probe!("truncation", TruncationBlock);
    probe!("sweep", SweepBlock);
    probe!("seeds", SeedBlock);
    probe!("output", OutputBlock);
    probe!("solver", SolverBlock);
    probe!("options", Options);
    Violation::error("$", err.to_string())
}

fn positive(v: f64) -> bool {
    v > 0.0 && v.is_finite()
}

impl ExperimentConfig {
    pub fn domain(&self) -> Result<Domain, Violation> {
        Domain::new(self.domain.dim, self.domain.side).map_err(|e| Violation::error("domain", e.to_string()))
    }

    pub fn model(&self) -> Result<ModelParams, Violation> {
        self.model
            .as_ref()
            .ok_or_else(|| Violation::error("model", format!("required by {}", self.experiment)))?
            .resolve(self.domain.dim)
    }

    /// Environment intensity: `env.z`, falling back to `model.z`.
    pub fn env_z(&self) -> f64 {
        self.env
            .as_ref()
            .and_then(|e| e.z)
            .or(self.model.as_ref().map(|m| m.z))
            .unwrap_or(0.0)
    }

    /// Every problem found, errors and warnings alike.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let exp = self.experiment;
        if self.domain.dim == 0 {
            out.push(Violation::error("domain.dim", "must be at least 1"));
        }
        if !positive(self.domain.side) {
            out.push(Violation::error("domain.side", format!("must be positive, got {}", self.domain.side)));
        }

        match (&self.model, exp.needs_model()) {
            (None, true) => out.push(Violation::error("model", format!("required by {exp}"))),
            (Some(m), _) => {
                if let Err(v) = m.resolve(self.domain.dim.max(1)) {
                    out.push(v);
                }
                if m.a_plus.mass.is_some_and(|x| (x - 1.0).abs() > 1e-9) {
                    out.push(Violation::error("model.a_plus.mass", "dispersal must be a probability density"));
                }
                for (name, k) in m.kernels() {
                    if k.range > 0.5 * self.domain.side {
                        out.push(Violation::warning(
                            format!("model.{name}.range"),
                            format!(
                                "range {} exceeds half the side {}; the kernel wraps around the torus",
                                k.range, self.domain.side
                            ),
                        ));
                    }
                }
            }
            _ => {}
        }

        match (&self.env, exp.needs_env()) {
            (None, true) => out.push(Violation::error("env", format!("required by {exp}"))),
            (Some(e), _) => {
                if !positive(e.epsilon) {
                    out.push(Violation::error("env.epsilon", "epsilon must be positive"));
                }
                if let Some(z) = e.z {
                    if !(z >= 0.0 && z.is_finite()) {
                        out.push(Violation::error("env.z", format!("must be nonnegative, got {z}")));
                    }
                    if let Some(m) = &self.model {
                        if m.z != z && !matches!(exp, Experiment::MomentBound) {
                            out.push(Violation::error(
                                "env.z",
                                format!("differs from model.z ({} vs {})", z, m.z),
                            ));
                        }
                    }
                }
                if let Some(site) = &e.site {
                    if site.len() != self.domain.dim {
                        out.push(Violation::error("env.site", format!("must have {} coordinates", self.domain.dim)));
                    }
                }
                let lattice_chain = exp.needs_truncation() && exp != Experiment::MomentBound;
                if lattice_chain && e.kind == EnvBlockKind::Poisson {
                    out.push(Violation::error("env.kind", format!("{exp} needs a chain environment")));
                }
                if lattice_chain && self.env_z() <= 0.0 {
                    out.push(Violation::error("env.z", "chain environments need a positive intensity"));
                }
                if exp == Experiment::EnvErgodic && e.kind == EnvBlockKind::Poisson {
                    out.push(Violation::error("env.kind", "the ergodic average needs a dynamic environment"));
                }
            }
            _ => {}
        }

        match (&self.truncation, exp.needs_truncation()) {
            (None, true) => out.push(Violation::error("truncation", format!("required by {exp}"))),
            (Some(t), _) => {
                let sites = t.m.checked_pow(self.domain.dim as u32).unwrap_or(usize::MAX);
                if t.m == 0 {
                    out.push(Violation::error("truncation.M", "must be at least 1"));
                } else if sites > MAX_SITES {
                    out.push(Violation::error(
                        "truncation.M",
                        format!("{sites} lattice sites exceed the cap of {MAX_SITES}"),
                    ));
                } else {
                    if t.n > sites {
                        out.push(Violation::error("truncation.N", format!("must not exceed the {sites} sites")));
                    }
                    let states: f64 = (0..=t.n.min(sites)).map(|k| binomial(sites, k)).sum();
                    if states > MAX_STATES as f64 {
                        out.push(Violation::error(
                            "truncation",
                            format!("{states} states exceed the cap of {MAX_STATES}"),
                        ));
                    }
                }
                if let Some(k) = t.k {
                    let expected = match self.env.as_ref().map(|e| e.kind) {
                        Some(EnvBlockKind::Poisson) | None => 1,
                        _ => 2,
                    };
                    if k != expected {
                        out.push(Violation::error("truncation.K", format!("the environment chain has {expected} states")));
                    }
                }
                if let Some(sites_init) = &self.options.init_sites {
                    if sites_init.len() > t.n {
                        out.push(Violation::error("options.init_sites", "more sites than the population cap"));
                    }
                    if sites_init.iter().any(|&s| s >= sites) {
                        out.push(Violation::error("options.init_sites", format!("sites must be below {sites}")));
                    }
                    let mut sorted = sites_init.clone();
                    sorted.sort_unstable();
                    sorted.dedup();
                    if sorted.len() != sites_init.len() {
                        out.push(Violation::error("options.init_sites", "sites must be distinct"));
                    }
                }
            }
            _ => {}
        }

        let s = &self.sweep;
        for (i, e) in s.epsilon.iter().enumerate() {
            if !positive(*e) {
                out.push(Violation::error(format!("sweep.epsilon[{i}]"), "epsilon must be positive"));
            }
        }
        for (i, d) in s.delta.iter().enumerate() {
            if !(*d >= 0.0 && d.is_finite()) {
                out.push(Violation::error(format!("sweep.delta[{i}]"), format!("must be nonnegative, got {d}")));
            }
        }
        for (i, z) in s.z.iter().enumerate() {
            if !(*z >= 0.0 && z.is_finite()) {
                out.push(Violation::error(format!("sweep.z[{i}]"), format!("must be nonnegative, got {z}")));
            }
        }
        if !positive(s.horizon) {
            out.push(Violation::error("sweep.horizon", format!("must be positive, got {}", s.horizon)));
        }
        if s.points == 0 {
            out.push(Violation::error("sweep.points", "must be at least 1"));
        }
        match exp {
            Experiment::AveragingSweep if s.epsilon.is_empty() => {
                out.push(Violation::error("sweep.epsilon", "needs at least one value"))
            }
            Experiment::DeltaSweep | Experiment::NormBound if s.delta.is_empty() => {
                out.push(Violation::error("sweep.delta", "needs at least one value"))
            }
            Experiment::NormBound if s.delta.contains(&0.0) => out.push(Violation::error(
                "sweep.delta",
                "the norm bound is vacuous at delta = 0",
            )),
            Experiment::StochasticityProbe | Experiment::ResolventCheck
                if s.sizes.windows(2).any(|w| w[0] >= w[1]) => {
                    out.push(Violation::error("sweep.sizes", "must be strictly increasing"));
                }
            _ => {}
        }
        if exp == Experiment::DeltaSweep {
            if let Some(e) = &self.env {
                if e.kind == EnvBlockKind::Poisson && s.delta.iter().any(|&d| d > 0.0) {
                    out.push(Violation::error(
                        "env.kind",
                        "damping does not commute with Poisson averaging; use a chain environment",
                    ));
                }
            }
        }
        if self.seeds.replicas == 0 {
            out.push(Violation::error("seeds.replicas", "must be at least 1"));
        }
        if !(self.solver.tol > 0.0 && self.solver.tol < 1.0) {
            out.push(Violation::error("solver.tol", format!("must lie in (0, 1), got {}", self.solver.tol)));
        }
        let o = &self.options;
        for (path, v) in [
            ("options.samples", o.samples),
            ("options.grid", o.grid),
            ("options.terms", o.terms),
            ("options.quadrature_nodes", o.quadrature_nodes.map(|n| n.saturating_sub(1))),
        ] {
            if v == Some(0) {
                out.push(Violation::error(path, "too small"));
            }
        }
        for (path, v) in [("options.a", o.a), ("options.t", o.t), ("options.threshold", o.threshold)] {
            if v.is_some_and(|v| !positive(v)) {
                out.push(Violation::error(path, "must be positive"));
            }
        }
        for (path, v) in [("options.linear_birth", o.linear_birth), ("options.linear_death", o.linear_death)] {
            if v.is_some_and(|v| !(v >= 0.0 && v.is_finite())) {
                out.push(Violation::error(path, "must be nonnegative"));
            }
        }
        if let Some(x0) = &o.x0 {
            if x0.len() != self.domain.dim {
                out.push(Violation::error("options.x0", format!("must have {} coordinates", self.domain.dim)));
            }
        }
        out
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}
