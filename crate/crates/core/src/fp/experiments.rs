//! Convergence experiments on truncated spaces: ε → 0, δ → 0, the damped
//! norm bound and the first-moment bound.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::logistic::{self, ModelParams};

use super::build::{build_averaged_generator, build_joint_generator, lattice_averaged_intensities, EnvAverage};
use super::evolve::{evolve_grid, DensityVector, Method};
use super::{EnvChain, Generator, SiteLattice, TruncatedSpace};

/// Solver settings shared by the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Solver {
    pub method: Method,
    pub tol: f64,
}

impl Default for Solver {
    fn default() -> Self {
        Self {
            method: Method::Uniformization,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorRow {
    /// ε or δ, depending on the sweep.
    pub param: f64,
    pub t: f64,
    pub error: f64,
    /// Marginal total-variation error `Σ_η |Σ_k p(η,k) − ρ̄(η)|`.
    pub tv_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub rows: Vec<ErrorRow>,
    /// `(param, sup_t error)` in sweep order.
    pub sup: Vec<(f64, f64)>,
}

impl SweepTable {
    fn from_rows(params: &[f64], per_param: Vec<Vec<ErrorRow>>) -> Self {
        let sup = params
            .iter()
            .zip(&per_param)
            .map(|(&p, rows)| (p, rows.iter().map(|r| r.error).fold(0.0, f64::max)))
            .collect();
        Self {
            rows: per_param.into_iter().flatten().collect(),
            sup,
        }
    }

    pub fn sup_errors(&self) -> Vec<f64> {
        self.sup.iter().map(|s| s.1).collect()
    }

    /// Least-squares slope of `log sup_error` against `log param`, over
    /// entries with positive param and error.
    pub fn log_log_slope(&self) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .sup
            .iter()
            .filter(|(p, e)| *p > 0.0 && *e > 0.0)
            .map(|(p, e)| (p.ln(), e.ln()))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        Some(sxy / sxx)
    }
}

fn check_grid(t_grid: &[f64], rho0: &DensityVector, sp: &TruncatedSpace) -> Result<()> {
    if t_grid.is_empty() {
        return Err(invalid("t_grid", "must be nonempty"));
    }
    if rho0.len() != sp.len() {
        return Err(Error::DimensionMismatch {
            expected: sp.len(),
            got: rho0.len(),
        });
    }
    Ok(())
}

/// Distance between the joint law at scale ε and the averaged density,
/// in the `L¹(λ⊗μ)` norm `Σ_k Σ_η μ_k |p(η,k)/μ_k − ρ̄(η)|`.
#[allow(clippy::too_many_arguments)]
pub fn averaging_error(
    sp: &TruncatedSpace,
    lat: &SiteLattice,
    env: &EnvChain,
    p: &ModelParams,
    eps_list: &[f64],
    t_grid: &[f64],
    rho0: &DensityVector,
    solver: Solver,
) -> Result<SweepTable> {
    check_grid(t_grid, rho0, sp)?;
    let avg = build_averaged_generator(sp, lat, EnvAverage::Chain(env), p)?.adjoint();
    let reference = evolve_grid(rho0, &avg, t_grid, solver.method, solver.tol)?;
    let p0 = rho0.product(env.mu());
    let s = sp.len();
    let per_eps = eps_list
        .par_iter()
        .map(|&eps| {
            let joint = build_joint_generator(sp, lat, env, p, eps)?.adjoint();
            let path = evolve_grid(&p0, &joint, t_grid, solver.method, solver.tol)?;
            Ok(t_grid
                .iter()
                .zip(path.iter().zip(&reference))
                .map(|(&t, (pt, rb))| {
                    let (pt, rb) = (pt.values(), rb.values());
                    let mut error = 0.0;
                    let mut marginal = vec![0.0; s];
                    for (k, &mu) in env.mu().iter().enumerate() {
                        for i in 0..s {
                            error += (pt[k * s + i] - mu * rb[i]).abs();
                            marginal[i] += pt[k * s + i];
                        }
                    }
                    let tv_error = marginal.iter().zip(rb).map(|(a, b)| (a - b).abs()).sum();
                    ErrorRow {
                        param: eps,
                        t,
                        error,
                        tv_error,
                    }
                })
                .collect())
        })
        .collect::<Result<Vec<Vec<ErrorRow>>>>()?;
    Ok(SweepTable::from_rows(eps_list, per_eps))
}

/// L¹ distance between the damped and undamped averaged evolutions.
#[allow(clippy::too_many_arguments)]
pub fn delta_error(
    sp: &TruncatedSpace,
    lat: &SiteLattice,
    env: EnvAverage<'_>,
    p: &ModelParams,
    delta_list: &[f64],
    t_grid: &[f64],
    rho0: &DensityVector,
    solver: Solver,
) -> Result<SweepTable> {
    check_grid(t_grid, rho0, sp)?;
    let undamped = ModelParams { delta: 0.0, ..*p };
    let g0 = build_averaged_generator(sp, lat, env, &undamped)?.adjoint();
    let reference = evolve_grid(rho0, &g0, t_grid, solver.method, solver.tol)?;
    let per_delta = delta_list
        .par_iter()
        .map(|&delta| {
            let pd = ModelParams { delta, ..*p };
            let g = build_averaged_generator(sp, lat, env, &pd)?.adjoint();
            let path = evolve_grid(rho0, &g, t_grid, solver.method, solver.tol)?;
            Ok(t_grid
                .iter()
                .zip(path.iter().zip(&reference))
                .map(|(&t, (a, b))| {
                    let e = a.l1_distance(b);
                    ErrorRow {
                        param: delta,
                        t,
                        error: e,
                        tv_error: e,
                    }
                })
                .collect())
        })
        .collect::<Result<Vec<Vec<ErrorRow>>>>()?;
    Ok(SweepTable::from_rows(delta_list, per_delta))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormReport {
    pub norm: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Induced L¹ norm of a damped forward generator against `2/(eδ)`.
pub fn operator_norm_check(g: &Generator, delta: f64) -> Result<NormReport> {
    if delta == 0.0 {
        return Err(Error::BoundVacuous);
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(invalid("delta", format!("must be positive, got {delta}")));
    }
    let norm = g.forward_l1_norm();
    let bound = 2.0 / (std::f64::consts::E * delta);
    Ok(NormReport {
        norm,
        bound,
        pass: norm <= bound + 1e-12,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentRow {
    pub t: f64,
    pub moment: f64,
    pub bound: f64,
    /// Mass on `|η| ∈ {N−1, N}`.
    pub boundary_mass: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentReport {
    pub beta: f64,
    pub rows: Vec<MomentRow>,
    pub holds: bool,
    pub max_boundary_mass: f64,
    /// Boundary mass reached `1e-6`: the bound may be shaped by the cap.
    pub truncation_limited: bool,
}

/// Boundary occupancy above which the truncation is considered to bite.
pub const BOUNDARY_GUARD: f64 = 1e-6;

/// Checks `Σ|η|ρ̄_t ≤ e^{βt} Σ|η|ρ̄_0` along the averaged evolution.
///
/// For a Poisson environment `β = λ̄ − m̄`; for a chain environment the
/// largest per-site `λ̄(x) − m̄(x)` is used.
pub fn moment_bound_check(
    sp: &TruncatedSpace,
    lat: &SiteLattice,
    p: &ModelParams,
    env: EnvAverage<'_>,
    rho0: &DensityVector,
    t_grid: &[f64],
    solver: Solver,
) -> Result<MomentReport> {
    check_grid(t_grid, rho0, sp)?;
    let beta = match env {
        EnvAverage::Poisson => logistic::beta(p, lat.domain().dim),
        EnvAverage::Chain(chain) => {
            let (m_bar, l_bar) = lattice_averaged_intensities(lat, chain, p);
            l_bar.iter().zip(&m_bar).map(|(l, m)| l - m).fold(f64::NEG_INFINITY, f64::max)
        }
    };
    let g = build_averaged_generator(sp, lat, env, p)?.adjoint();
    let sizes = sp.sizes();
    let n = sp.cap();
    let boundary: Vec<f64> = sizes
        .iter()
        .map(|&s| if n > 0 && s as usize + 1 >= n { 1.0 } else { 0.0 })
        .collect();
    let m0 = rho0.expect(&sizes);
    let path = evolve_grid(rho0, &g, t_grid, solver.method, solver.tol)?;
    // an L¹ error `tol` moves the first moment by at most `N·tol`
    let slack = n as f64 * solver.tol;
    let rows: Vec<MomentRow> = t_grid
        .iter()
        .zip(&path)
        .map(|(&t, rho)| {
            let moment = rho.expect(&sizes);
            let bound = (beta * t).exp() * m0;
            MomentRow {
                t,
                moment,
                bound,
                boundary_mass: rho.expect(&boundary),
                holds: moment <= bound + slack,
            }
        })
        .collect();
    let max_boundary_mass = rows.iter().map(|r| r.boundary_mass).fold(0.0, f64::max);
    Ok(MomentReport {
        beta,
        holds: rows.iter().all(|r| r.holds),
        truncation_limited: max_boundary_mass >= BOUNDARY_GUARD,
        max_boundary_mass,
        rows,
    })
}
