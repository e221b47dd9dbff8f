//! Spatial logistic birth–death model in a random environment.
//!
//! A particle at `x` dies at rate `m(x,γ) + Σ_{y∈η∖x} a⁻(x−y)` with
//! `m(x,γ) = m₀ + Σ_{w∈γ} κ(x−w)`, and gives birth at rate
//! `λ(x,γ) = λ₀ + Σ_{w∈γ} ψ(x−w)`, the offspring being displaced by the
//! probability density `a⁺`. All kernels are radial and evaluated through the
//! minimum-image distance of the torus.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::config_space::{Configuration, Domain, Point};
use crate::error::{invalid, Error, Result};
use crate::fp::{Generator, Orientation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelShape {
    Gaussian,
    Tophat,
    Exponential,
}

/// Radial kernel `k(x) = amplitude · f(|x| / range)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelFunction {
    pub shape: KernelShape,
    pub amplitude: f64,
    pub range: f64,
}

/// Volume of the unit ball in `d` dimensions.
pub fn unit_ball_volume(d: usize) -> f64 {
    match d {
        0 => 1.0,
        1 => 2.0,
        _ => unit_ball_volume(d - 2) * 2.0 * PI / d as f64,
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

impl KernelFunction {
    pub fn new(shape: KernelShape, amplitude: f64, range: f64) -> Result<Self> {
        let k = Self {
            shape,
            amplitude,
            range,
        };
        k.check()?;
        Ok(k)
    }

    /// The identically zero kernel.
    pub fn zero() -> Self {
        Self {
            shape: KernelShape::Gaussian,
            amplitude: 0.0,
            range: 1.0,
        }
    }

    /// A kernel of the given shape scaled to unit mass in `dim` dimensions.
    pub fn density(shape: KernelShape, range: f64, dim: usize) -> Result<Self> {
        let unit = Self::new(shape, 1.0, range)?;
        Ok(Self {
            amplitude: 1.0 / unit.mass(dim),
            ..unit
        })
    }

    pub fn check(&self) -> Result<()> {
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(invalid("amplitude", format!("must be nonnegative, got {}", self.amplitude)));
        }
        if !(self.range > 0.0 && self.range.is_finite()) {
            return Err(invalid("range", format!("must be positive, got {}", self.range)));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.amplitude == 0.0
    }

    /// Kernel value at distance `r ≥ 0`.
    #[inline]
    pub fn eval(&self, r: f64) -> f64 {
        if self.amplitude == 0.0 {
            return 0.0;
        }
        let s = r / self.range;
        match self.shape {
            KernelShape::Gaussian => self.amplitude * (-0.5 * s * s).exp(),
            KernelShape::Tophat => {
                if s <= 1.0 {
                    self.amplitude
                } else {
                    0.0
                }
            }
            KernelShape::Exponential => self.amplitude * (-s).exp(),
        }
    }

    /// `∫_{R^d} k(x) dx` in closed form.
    pub fn mass(&self, dim: usize) -> f64 {
        let r = self.range;
        let d = dim as f64;
        let unit = match self.shape {
            KernelShape::Gaussian => (2.0 * PI).powf(0.5 * d),
            KernelShape::Tophat => unit_ball_volume(dim),
            // surface of the unit sphere times Γ(d)
            KernelShape::Exponential => d * unit_ball_volume(dim) * factorial(dim - 1),
        };
        self.amplitude * unit * r.powi(dim as i32)
    }

    /// Radius beyond which the kernel is negligible (zero for the top-hat).
    pub fn effective_support(&self) -> f64 {
        match self.shape {
            KernelShape::Gaussian => 10.0 * self.range,
            KernelShape::Tophat => self.range,
            KernelShape::Exponential => 40.0 * self.range,
        }
    }
}

/// Closed-form kernel mass `⟨k⟩`.
pub fn kernel_mass(k: &KernelFunction, dim: usize) -> f64 {
    k.mass(dim)
}

/// Rate data of the logistic model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub m0: f64,
    pub lambda0: f64,
    pub z: f64,
    #[serde(default)]
    pub delta: f64,
    pub a_plus: KernelFunction,
    pub a_minus: KernelFunction,
    pub kappa: KernelFunction,
    pub psi: KernelFunction,
}

impl ModelParams {
    /// Checks signs, kernel validity and the unit mass of the dispersal kernel.
    pub fn check(&self, dim: usize) -> Result<()> {
        for (name, v) in [("m0", self.m0), ("lambda0", self.lambda0), ("z", self.z), ("delta", self.delta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("must be nonnegative, got {v}")));
            }
        }
        for k in [&self.a_plus, &self.a_minus, &self.kappa, &self.psi] {
            k.check()?;
        }
        let mass = self.a_plus.mass(dim);
        if (mass - 1.0).abs() > 1e-9 {
            return Err(invalid("a_plus", format!("must be a probability density (mass {mass})")));
        }
        Ok(())
    }

    /// Same parameters with the environment terms folded into constants:
    /// `m₀ → m̄`, `λ₀ → λ̄`, no environment coupling.
    pub fn averaged(&self, dim: usize) -> Self {
        let avg = averaged_rates(self, dim);
        Self {
            m0: avg.m_bar,
            lambda0: avg.lambda_bar,
            z: 0.0,
            kappa: KernelFunction::zero(),
            psi: KernelFunction::zero(),
            ..*self
        }
    }
}

/// Environment contribution to mortality at `x`.
#[inline]
pub(crate) fn env_mortality(x: &[f64], gamma: &Configuration, p: &ModelParams, dom: &Domain) -> f64 {
    if p.kappa.is_zero() {
        return 0.0;
    }
    gamma.iter().map(|w| p.kappa.eval(dom.dist(x, &w.0))).sum()
}

#[inline]
pub(crate) fn env_fecundity(x: &[f64], gamma: &Configuration, p: &ModelParams, dom: &Domain) -> f64 {
    if p.psi.is_zero() {
        return 0.0;
    }
    gamma.iter().map(|w| p.psi.eval(dom.dist(x, &w.0))).sum()
}

/// `m(x,γ) + Σ_{y∈η∖x} a⁻(x−y)`.
pub fn death_rate(x: &Point, eta: &Configuration, gamma: &Configuration, p: &ModelParams, dom: &Domain) -> Result<f64> {
    let idx = eta.position(x).ok_or_else(|| Error::NotMember(x.to_string()))?;
    let competition: f64 = eta
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != idx)
        .map(|(_, y)| p.a_minus.eval(dom.dist(&x.0, &y.0)))
        .sum();
    Ok(p.m0 + env_mortality(&x.0, gamma, p, dom) + competition)
}

/// `λ(x,γ) = λ₀ + Σ_{w∈γ} ψ(x−w)`.
pub fn fecundity(x: &Point, gamma: &Configuration, p: &ModelParams, dom: &Domain) -> f64 {
    p.lambda0 + env_fecundity(&x.0, gamma, p, dom)
}

/// Total jump rate `q(γ,η)`: all deaths plus all births (unit-mass dispersal).
pub fn total_rate(eta: &Configuration, gamma: &Configuration, p: &ModelParams, dom: &Domain) -> f64 {
    let pts = eta.points();
    let mut q = 0.0;
    for (i, x) in pts.iter().enumerate() {
        q += p.m0 + env_mortality(&x.0, gamma, p, dom) + p.lambda0 + env_fecundity(&x.0, gamma, p, dom);
        for (j, y) in pts.iter().enumerate() {
            if i != j {
                q += p.a_minus.eval(dom.dist(&x.0, &y.0));
            }
        }
    }
    q
}

/// Damping factor `e^{-δq}`.
#[inline]
pub fn damping(q: f64, delta: f64) -> f64 {
    if delta == 0.0 {
        1.0
    } else {
        (-delta * q).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AveragedRates {
    pub m_bar: f64,
    pub lambda_bar: f64,
}

/// μ-averaged intensities for a Poisson(z) environment:
/// `m̄ = m₀ + z⟨κ⟩`, `λ̄ = λ₀ + z⟨ψ⟩`.
pub fn averaged_rates(p: &ModelParams, dim: usize) -> AveragedRates {
    AveragedRates {
        m_bar: p.m0 + p.z * p.kappa.mass(dim),
        lambda_bar: p.lambda0 + p.z * p.psi.mass(dim),
    }
}

/// Averaged net growth rate `β(z) = λ̄ − m̄`.
pub fn beta(p: &ModelParams, dim: usize) -> f64 {
    let a = averaged_rates(p, dim);
    a.lambda_bar - a.m_bar
}

/// Intensity at which `β` vanishes, if the affine map has a root.
pub fn critical_intensity(p: &ModelParams, dim: usize) -> Option<f64> {
    let slope = p.psi.mass(dim) - p.kappa.mass(dim);
    if slope == 0.0 {
        return None;
    }
    Some((p.m0 - p.lambda0) / slope)
}

/// Trapezoidal quadrature settings for the dispersal convolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub nodes_per_dim: usize,
    /// Margins up to this value count as satisfied.
    pub tol: f64,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self {
            nodes_per_dim: 1 << 10,
            tol: 1e-9,
        }
    }
}

const QUADRATURE_NODE_CAP: usize = 1 << 24;

/// `(a⁺ ∗ φ)(x)` on `R^d` by tensor trapezoidal quadrature over the kernel support.
pub fn convolve_dispersal<F>(a_plus: &KernelFunction, phi: &F, x: &Point, quad: &Quadrature) -> Result<f64>
where
    F: Fn(&Point) -> f64,
{
    let d = x.dim();
    let n = quad.nodes_per_dim;
    if n < 2 {
        return Err(Error::Quadrature("need at least two nodes per dimension".into()));
    }
    let total = (n as f64).powi(d as i32);
    if total > QUADRATURE_NODE_CAP as f64 {
        return Err(Error::Quadrature(format!(
            "{n}^{d} nodes exceeds the cap of {QUADRATURE_NODE_CAP}"
        )));
    }
    let r = a_plus.effective_support();
    let h = 2.0 * r / (n - 1) as f64;
    let node = |i: usize| -r + i as f64 * h;
    let weight = |i: usize| if i == 0 || i == n - 1 { 0.5 * h } else { h };

    let mut idx = vec![0usize; d];
    let mut y = vec![0.0; d];
    let mut arg = Point(vec![0.0; d]);
    let mut acc = 0.0;
    loop {
        let mut w = 1.0;
        for k in 0..d {
            y[k] = node(idx[k]);
            w *= weight(idx[k]);
            arg.0[k] = x.0[k] - y[k];
        }
        let norm = y.iter().map(|c| c * c).sum::<f64>().sqrt();
        let kv = a_plus.eval(norm);
        if kv != 0.0 {
            acc += w * kv * phi(&arg);
        }
        // odometer increment
        let mut k = 0;
        loop {
            if k == d {
                if !acc.is_finite() {
                    return Err(Error::Quadrature(format!("non-finite result at {x}")));
                }
                return Ok(acc);
            }
            idx[k] += 1;
            if idx[k] < n {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovReport {
    pub holds: bool,
    pub worst_margin: f64,
    pub worst_x: Point,
}

/// Evaluates `λ̄(a⁺∗φ)(x) − cφ(x) − φ(x)m̄` over `grid` for the Poisson
/// averaged intensities; the condition holds where the margin is ≤ 0.
pub fn lyapunov_check_logistic<F>(
    p: &ModelParams,
    phi: F,
    grid: &[Point],
    c: f64,
    quad: &Quadrature,
) -> Result<LyapunovReport>
where
    F: Fn(&Point) -> f64,
{
    let first = grid.first().ok_or_else(|| invalid("grid", "must be nonempty"))?;
    let dim = first.dim();
    let avg = averaged_rates(p, dim);
    let mut worst = f64::NEG_INFINITY;
    let mut worst_x = first.clone();
    for x in grid {
        let fx = phi(x);
        if !(fx >= 1.0) {
            return Err(invalid("phi", format!("must be ≥ 1, got {fx} at {x}")));
        }
        let conv = convolve_dispersal(&p.a_plus, &phi, x, quad)?;
        let margin = avg.lambda_bar * conv - c * fx - fx * avg.m_bar;
        if margin > worst {
            worst = margin;
            worst_x = x.clone();
        }
    }
    Ok(LyapunovReport {
        holds: worst <= quad.tol,
        worst_margin: worst,
        worst_x,
    })
}

/// Right-hand side of a drift condition on `∫(V(ξ)−V(η))Q(η,dξ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DriftBound {
    /// `c(1 + V(η)) − ε q(η)`
    Affine { c: f64, eps: f64 },
    /// `c V(η)`
    Linear { c: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftViolation {
    pub state: usize,
    pub drift: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftReport {
    pub holds: bool,
    /// Largest `drift − bound` over all rows.
    pub worst_margin: f64,
    pub violations: Vec<DriftViolation>,
}

/// Row-wise drift check of a Lyapunov function on a finite generator.
pub fn generic_lyapunov_check(q: &Generator, v: &[f64], bound: DriftBound) -> Result<DriftReport> {
    if v.len() != q.dim() {
        return Err(Error::DimensionMismatch {
            expected: q.dim(),
            got: v.len(),
        });
    }
    let backward;
    let q = match q.orientation() {
        Orientation::Backward => q,
        Orientation::Forward => {
            backward = q.adjoint();
            &backward
        }
    };
    let mut worst = f64::NEG_INFINITY;
    let mut violations = Vec::new();
    for i in 0..q.dim() {
        let mut drift = 0.0;
        let mut rate = 0.0;
        for (j, r) in q.row(i) {
            drift += r * (v[j] - v[i]);
            rate += r;
        }
        // mass lost to a cemetery jumps to V = 0
        let lost = q.outflow(i) - rate;
        if lost > 0.0 {
            drift -= lost * v[i];
            rate += lost;
        }
        let b = match bound {
            DriftBound::Affine { c, eps } => c * (1.0 + v[i]) - eps * rate,
            DriftBound::Linear { c } => c * v[i],
        };
        let margin = drift - b;
        worst = worst.max(margin);
        if margin > 1e-12 * (1.0 + b.abs()) {
            violations.push(DriftViolation { state: i, drift, bound: b });
        }
    }
    Ok(DriftReport {
        holds: violations.is_empty(),
        worst_margin: if q.dim() == 0 { 0.0 } else { worst },
        violations,
    })
}
