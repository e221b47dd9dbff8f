//! One runner per experiment. Each returns CSV tables and pass/fail checks;
//! nothing here touches the filesystem.

use std::f64::consts::PI;

use averaging_core::config_space::{verify_ibp, Configuration, Domain, Point};
use averaging_core::environment::{env_ergodic_average, EnvKind, EnvSpec};
use averaging_core::fp::{
    averaging_error, build_averaged_generator, build_joint_generator, build_system_generator, delta_error,
    enumerate_space, evolve, moment_bound_check, operator_norm_check, DensityVector, EnvAverage, EnvChain, Generator,
    Orientation, SiteLattice, Solver, SweepTable, TruncatedSpace,
};
use averaging_core::logistic::{
    self, averaged_rates, generic_lyapunov_check, lyapunov_check_logistic, DriftBound, KernelFunction, KernelShape,
    ModelParams, Quadrature,
};
use averaging_core::semigroup::{birth_death_truncation, resolvent_series, stochasticity_probe, SplitGenerator};
use averaging_core::sim::{
    estimate_moment, run_ensemble, simulate, write_ensemble_csv, ChainEnv, ContinuumEnv, Habitat, SimConfig,
};
use averaging_core::stats::chi2_gof;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{EnvBlockKind, Experiment, ExperimentConfig, PhiChoice, Violation};
use crate::RunError;

/// A CSV body (column line plus rows) and the file it goes to.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub file: String,
    pub body: String,
}

impl Table {
    fn new(file: &str, columns: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Self {
        let mut body = columns.join(",");
        body.push('\n');
        for r in rows {
            body.push_str(&r.join(","));
            body.push('\n');
        }
        Self {
            file: file.to_string(),
            body,
        }
    }
}

/// One pass/fail judgement with the number it rests on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

impl Check {
    fn below(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            pass: value < threshold,
            value,
            threshold,
            detail: format!("{value:e} < {threshold:e}"),
        }
    }

    fn above(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            pass: value > threshold,
            value,
            threshold,
            detail: format!("{value:e} > {threshold:e}"),
        }
    }

    fn flag(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pass,
            value: f64::from(u8::from(pass)),
            threshold: 1.0,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub tables: Vec<Table>,
    pub checks: Vec<Check>,
}

fn f(v: f64) -> String {
    v.to_string()
}

pub fn dispatch(cfg: &ExperimentConfig) -> Result<Outcome, RunError> {
    match cfg.experiment {
        Experiment::IbpTest => ibp_test(cfg),
        Experiment::Lyapunov => lyapunov(cfg),
        Experiment::AveragingSweep => averaging_sweep(cfg),
        Experiment::DeltaSweep => delta_sweep(cfg),
        Experiment::McCompare => mc_compare(cfg),
        Experiment::MomentBound => moment_bound(cfg),
        Experiment::ResolventCheck => resolvent_check(cfg),
        Experiment::StochasticityProbe => probe(cfg),
        Experiment::NormBound => norm_bound(cfg),
        Experiment::McClosedForm => closed_form(cfg),
        Experiment::EnvErgodic => env_ergodic(cfg),
    }
}

fn stream(seed: u64, i: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i);
    rng
}

// ---------------------------------------------------------------- battery

/// Test functions `G(ξ, η)` for the integration-by-parts identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TestFunction {
    /// `1{ξ = ∅} 1{η = ∅}`
    BothEmpty,
    /// `s^{|ξ|+|η|}`
    Geometric(f64),
    /// `|ξ| 1{η = ∅}`
    CountIfEmpty,
    /// `Π_{x∈ξ} f₁(x) Π_{y∈η} f₂(y)` with `fᵢ(x) = aᵢ + bᵢ cos(2πx₁/L)`.
    Product { a: [f64; 2], b: [f64; 2] },
}

impl TestFunction {
    pub fn name(&self) -> String {
        match self {
            Self::BothEmpty => "both_empty".into(),
            Self::Geometric(s) => format!("geometric_{s}"),
            Self::CountIfEmpty => "count_if_empty".into(),
            Self::Product { .. } => "product".into(),
        }
    }

    pub fn eval(&self, xi: &Configuration, eta: &Configuration, dom: &Domain) -> f64 {
        match *self {
            Self::BothEmpty => f64::from(u8::from(xi.is_empty() && eta.is_empty())),
            Self::Geometric(s) => s.powi((xi.len() + eta.len()) as i32),
            Self::CountIfEmpty => {
                if eta.is_empty() {
                    xi.len() as f64
                } else {
                    0.0
                }
            }
            Self::Product { a, b } => {
                let g = |i: usize, p: &Point| a[i] + b[i] * (2.0 * PI * p.0[0] / dom.side).cos();
                xi.iter().map(|p| g(0, p)).product::<f64>() * eta.iter().map(|p| g(1, p)).product::<f64>()
            }
        }
    }
}

/// The five-function battery; the two products draw their coefficients
/// from `seed`.
pub fn ibp_battery(seed: u64) -> Vec<TestFunction> {
    let mut rng = stream(seed, u64::MAX);
    let mut product = || {
        let a = [rng.random_range(0.2..0.8), rng.random_range(0.2..0.8)];
        let b = [rng.random_range(0.0..0.5) * a[0], rng.random_range(0.0..0.5) * a[1]];
        TestFunction::Product { a, b }
    };
    vec![
        TestFunction::BothEmpty,
        TestFunction::Geometric(0.5),
        TestFunction::CountIfEmpty,
        product(),
        product(),
    ]
}

fn ibp_test(cfg: &ExperimentConfig) -> Result<Outcome, RunError> {
    let dom = cfg.domain()?;
    let n = cfg.options.samples.unwrap_or(100_000);
    let seed = cfg.seeds.base;
    let battery = ibp_battery(seed);
    let reports = battery
        .par_iter()
        .enumerate()
        .map(|(i, g)| verify_ibp(|xi, eta| g.eval(xi, eta, &dom), &dom, n, &mut stream(seed, i as u64)))
        .collect::<Result<Vec<_>, _>>()?;
    let names: Vec<String> = battery.iter().enumerate().map(|(i, g)| format!("g{}_{}", i + 1, g.name())).collect();
    let rows = names.iter().zip(&reports).map(|(name, r)| {
        vec![
            name.clone(),
            f(r.lhs),
            f(r.rhs),
            f(r.lhs_std_error),
            f(r.rhs_std_error),
            f(r.combined_error),
            r.pass.to_string(),
        ]
    });
    let table = Table::new(
        "ibp.csv",
        &["function", "lhs", "rhs", "lhs_se", "rhs_se", "combined_se", "pass"],
        rows,
    );
    let checks = names
        .iter()
        .zip(&reports)
        .map(|(name, r)| Check {
            name: format!("ibp {name}"),
            pass: r.pass,
            value: (r.lhs - r.rhs).abs(),
            threshold: 3.0 * r.combined_error,
            detail: format!("|{} - {}| vs 3σ = {}", r.lhs, r.rhs, 3.0 * r.combined_error),
        })
        .collect();
    Ok(Outcome {
        tables: vec![table],
        checks,
    })
}

// -------------------------------------------------------------- lyapunov

fn lyapunov(cfg: &ExperimentConfig) -> Result<Outcome, RunError> {
    let dom = cfg.domain()?;
    let p = cfg.model()?;
    let d = dom.dim;
    let beta = logistic::beta(&p, d);
    let c = cfg.options.c.unwrap_or(beta.max(0.0));
    let per_dim = cfg.options.grid.unwrap_or(21).max(1);
    let nodes = cfg.options.quadrature_nodes.unwrap_or(if d == 1 { 1 << 10 } else { 1 << 7 });
    let quad = Quadrature {
        nodes_per_dim: nodes,
        ..Quadrature::default()
    };
    let coord = |i: usize| {
        if per_dim == 1 {
            0.0
        } else {
            -0.5 * dom.side + dom.side * i as f64 / (per_dim - 1) as f64
        }
    };
    let grid: Vec<Point> = (0..per_dim.pow(d as u32))
        .map(|mut k| {
            Point(
                (0..d)
                    .map(|_| {
                        let i = k % per_dim;
                        k /= per_dim;
                        coord(i)
                    })
                    .collect(),
            )
        })
        .collect();
    let phi = cfg.options.phi.unwrap_or(PhiChoice::Quadratic);
    let phi_fn = move |x: &Point| match phi {
        PhiChoice::Constant => 1.0,
        PhiChoice::Quadratic => 1.0 + x.0.iter().map(|v| v * v).sum::<f64>(),
    };
    let margins = grid
        .par_iter()
        .map(|x| lyapunov_check_logistic(&p, phi_fn, std::slice::from_ref(x), c, &quad))
        .collect::<Result<Vec<_>, _>>()?;
    let holds = margins.iter().all(|r| r.holds);
    let worst = margins.iter().map(|r| r.worst_margin).fold(f64::NEG_INFINITY, f64::max);
    let mut tables = vec![Table::new(
        "lyapunov.csv",
        &["point", "phi", "margin"],
        grid.iter().zip(&margins).map(|(x, r)| {
            let pt: Vec<String> = x.0.iter().map(|v| f(*v)).collect();
            vec![pt.join(";"), f(phi_fn(x)), f(r.worst_margin)]
        }),
    )];
    let mut checks = vec![Check {
        name: "logistic drift condition".into(),
        pass: holds,
        value: worst,
        threshold: quad.tol,
        detail: format!("worst margin {worst:e} with c = {c}, beta = {beta}"),
    }];
    if let Some(t) = cfg.truncation {
        // |η| on the truncated averaged generator: drift ≤ max(0, β)|η|
        let (sp, lat) = lattice(cfg, t.m, t.n)?;
        let g = build_averaged_generator(&sp, &lat, EnvAverage::Poisson, &ModelParams { delta: 0.0, ..p })?;
        let v = sp.sizes();
        let r = generic_lyapunov_check(&g, &v, DriftBound::Linear { c: beta.max(0.0) })?;
        tables.push(Table::new(
            "drift.csv",
            &["state", "size", "drift_minus_bound"],
            (0..sp.len()).map(|i| {
                let drift: f64 = g.row(i).map(|(j, r)| r * (v[j] - v[i])).sum();
                vec![i.to_string(), f(v[i]), f(drift - beta.max(0.0) * v[i])]
            }),
        ));
        checks.push(Check {
            name: "truncated drift of |eta|".into(),
            pass: r.holds,
            value: r.worst_margin,
            threshold: 0.0,
            detail: format!("{} violating states of {}", r.violations.len(), sp.len()),
        });
    }
    Ok(Outcome { tables, checks })
}

// ----------------------------------------------------- truncated sweeps

fn lattice(cfg: &ExperimentConfig, m: usize, n: usize) -> Result<(TruncatedSpace, SiteLattice), RunError> {
    let dom = cfg.domain()?;
    let lat = SiteLattice::uniform(dom, m)?;
    let sp = enumerate_space(lat.len(), n)?;
    Ok((sp, lat))
}

fn env_chain(cfg: &ExperimentConfig) -> Result<EnvChain, RunError> {
    let env = cfg.env.as_ref().ok_or_else(|| Violation::error("env", "required"))?;
    let site = Point(env.site.clone().unwrap_or_else(|| vec![0.0; cfg.domain.dim]));
    let z = cfg.env_z();
    Ok(match env.kind {
        EnvBlockKind::FreeGlauber => EnvChain::one_site_glauber(site, z)?,
        EnvBlockKind::Resample => EnvChain::one_site_resample(site, z)?,
        EnvBlockKind::Poisson => return Err(Violation::error("env.kind", "a chain environment is required").into()),
    })
}

fn initial_mask(cfg: &ExperimentConfig) -> u32 {
    cfg.options
        .init_sites
        .as_deref()
        .unwrap_or(&[0])
        .iter()
        .fold(0u32, |m, &s| m | (1 << s))
}

fn initial_density(cfg: &ExperimentConfig, sp: &TruncatedSpace) -> Result<DensityVector, RunError> {
    let mask = initial_mask(cfg);
    let i = sp
        .index(mask)
        .ok_or_else(|| Violation::error("options.init_sites", "initial configuration outside the truncation"))?;
    Ok(DensityVector::point_mass(sp.len(), i))
}

fn solver(cfg: &ExperimentConfig) -> Solver {
    Solver {
        method: cfg.solver.method,
        tol: cfg.solver.tol,
    }
}

fn sweep_table(file: &str, param: &str, table: &SweepTable) -> Table {
    Table::new(
        file,
        &[param, "t", "error", "tv_error", "sup_error"],
        table.rows.iter().map(|r| {
            let sup = table.sup.iter().find(|s| s.0 == r.param).map_or(f64::NAN, |s| s.1);
            vec![f(r.param), f(r.t), f(r.error), f(r.tv_error), f(sup)]
        }),
    )
}

/// Sup errors ordered by decreasing parameter, strictly decreasing?
fn strictly_decreasing(table: &SweepTable) -> bool {
    let mut sup = table.sup.clone();
    sup.sort_by(|a, b| b.0.total_cmp(&a.0));
    sup.windows(2).all(|w| w[1].1 < w[0].1)
}

fn smallest(table: &SweepTable) -> (f64, f64) {
    table
        .sup
        .iter()
        .copied()
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap_or((f64::NAN, f64::NAN))
}

fn averaging_sweep(cfg: &ExperimentConfig) -> Result<Outcome, RunError> {
    let t = cfg.truncation.expect("validated");
    let (sp, lat) = lattice(cfg, t.m, t.n)?;
    let chain = env_chain(cfg)?;
    let p = cfg.model()?;
    let rho0 = initial_density(cfg, &sp)?;
    let table = averaging_error(&sp, &lat, &chain, &p, &cfg.sweep.epsilon, &cfg.sweep.t_grid(), &rho0, solver(cfg))?;
    let (eps, err) = smallest(&table);
    let threshold = cfg.options.threshold.unwrap_or(1e-2);
    Ok(Outcome {
        tables: vec![sweep_table("averaging.csv", "epsilon", &table)],
        checks: vec![
            Check::flag(
                "sup error strictly decreasing in epsilon",
                strictly_decreasing(&table),
                format!("{:?}", table.sup),
            ),
            Check::below(format!("sup error at epsilon = {eps}"), err, threshold),
        ],
    })
}

fn delta_sweep(cfg: &ExperimentConfig) -> Result<Outcome, RunError> {
    let t = cfg.truncation.expect("validated");
    let (sp, lat) = lattice(cfg, t.m, t.n)?;
    let p = cfg.model()?;
    let rho0 = initial_density(cfg, &sp)?;
    let chain;
    let env = match cfg.env.as_ref().map(|e| e.kind) {
        Some(EnvBlockKind::Poisson) | None => EnvAverage::Poisson,
        Some(_) => {
            chain = env_chain(cfg)?;
            EnvAverage::Chain(&chain)
        }
    };
    let table = delta_error(&sp, &lat, env, &p, &cfg.sweep.delta, &cfg.sweep.t_grid(), &rho0, solver(cfg))?;
    let (delta, err) = smallest(&table);
    let slope = table.log_log_slope().unwrap_or(f64::NAN);
    let min_slope = cfg.options.min_slope.unwrap_or(0.9);
    let threshold = cfg.options.threshold.unwrap_or(1e-3);
    Ok(Outcome {
        tables: vec![sweep_table("delta.csv", "delta", &table)],
        checks: vec![
            Check::flag(
                "sup error strictly decreasing in delta",
                strictly_decreasing(&table),
                format!("{:?}", table.sup),
            ),
            Check {
                name: "log-log slope".into(),
                pass: slope >= min_slope,
                value: slope,
                threshold: min_slope,
                detail: format!("{slope} >= {min_slope}"),
            },
            Check::below(format!("sup error at delta = {delta}"), err, threshold),
        ],
    })
}

fn moment_bound(cfg: &ExperimentConfig) -> Result<Outcome, RunError> {
    let t = cfg.truncation.expect("validated");
    let (sp, lat) = lattice(cfg, t.m, t.n)?;
    let base = cfg.model()?;
    let rho0 = initial_density(cfg, &sp)?;
    let zs = if cfg.sweep.z.is_empty() {
        vec![base.z]
    } else {
        cfg.sweep.z.clone()
    };
    let reports = zs
        .par_iter()
        .map(|&z| {
            let p = ModelParams { z, ..base };
            let chain;
            let env = match cfg.env.as_ref().map(|e| e.kind) {
                Some(EnvBlockKind::Poisson) | None => EnvAverage::Poisson,
                Some(kind) => {
                    let site = Point(vec![0.0; cfg.domain.dim]);
                    chain = match kind {
                        EnvBlockKind::FreeGlauber => EnvChain::one_site_glauber(site, z)?,
                        _ => EnvChain::one_site_resample(site, z)?,
                    };
                    EnvAverage::Chain(&chain)
                }
            };
            moment_bound_check(&sp, &lat, &p, env, &rho0, &cfg.sweep.t_grid(), solver(cfg))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let rows = zs.iter().zip(&reports).flat_map(|(z, r)| {
        r.rows.iter().map(move |row| {
            vec![
                f(*z),
                f(r.beta),
                f(row.t),
                f(row.moment),
                f(row.bound),
                f(row.boundary_mass),
                row.holds.to_string(),
            ]
        })
    });
    let table = Table::new(
        "moment.csv",
        &["z", "beta", "t", "moment", "bound", "boundary_mass", "holds"],
        rows,
    );
    let mut checks = Vec::new();
    for (z, r) in zs.iter().zip(&reports) {
        let worst = r.rows.iter().map(|row| row.moment - row.bound).fold(f64::NEG_INFINITY, f64::max);
        checks.push(Check {
            name: format!("first moment bound at z = {z} (beta = {})", r.beta),
            pass: r.holds,
            value: worst,
            threshold: sp.cap() as f64 * cfg.solver.tol,
            detail: format!("max(moment - bound) = {worst:e}"),
        });
        checks.push(Check::below(
            format!("boundary mass at z = {z}"),
            r.max_boundary_mass,
            averaging_core::fp::BOUNDARY_GUARD,
        ));
    }
    Ok(Outcome {
        tables: vec![table],
        checks,
    })
}

fn norm_bound(cfg: &ExperimentConfig) -> Result<Outcome, RunError> {
    let t = cfg.truncation.expect("validated");
    let (sp, lat) = lattice(cfg, t.m, t.n)?;
    let p = cfg.model()?;
    let chain = env_chain(cfg)?;
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    for &delta in &cfg.sweep.delta {
        let pd = ModelParams { delta, ..p };
        for (k, gamma) in chain.states().iter().enumerate() {
            let g = build_system_generator(&sp, &lat, gamma, &pd)?.adjoint();
            let r = operator_norm_check(&g, delta)?;
            rows.push((format!("env_state_{k}"), delta, r));
        }
        // one particle dying at rate 1/δ attains the bound
        let single = ModelParams {
            m0: 1.0 / delta,
            lambda0: 0.0,
            z: 0.0,
            delta,
            a_minus: KernelFunction::zero(),
            kappa: KernelFunction::zero(),
            psi: KernelFunction::zero(),
            ..p
        };
        let one = SiteLattice::uniform(cfg.domain()?, 1)?;
        let g = build_system_generator(&enumerate_space(1, 1)?, &one, &Configuration::empty(), &single)?.adjoint();
        let r = operator_norm_check(&g, delta)?;
        checks.push(Check::below(
            format!("bound attained at delta = {delta}"),
            (r.norm - r.bound).abs() / r.bound,
            1e-12,
        ));
        rows.push(("single_state".into(), delta, r));
    }
    let worst = rows.iter().map(|(_, _, r)| r.norm - r.bound).fold(f64::NEG_INFINITY, f64::max);
    checks.insert(
        0,
        Check {
            name: "norm <= 2/(e delta) + 1e-12 for every generator".into(),
            pass: rows.iter().all(|(_, _, r)| r.pass),
            value: worst,
            threshold: 1e-12,
            detail: format!("max(norm - bound) = {worst:e} over {} generators", rows.len()),
        },
    );
    let table = Table::new(
        "norms.csv",
        &["instance", "delta", "norm", "bound", "pass"],
        rows.iter()
            .map(|(name, delta, r)| vec![name.clone(), f(*delta), f(r.norm), f(r.bound), r.pass.to_string()]),
    );
    Ok(Outcome {
        tables: vec![table],
        checks,
    })
}

// ---------------------------------------------------------- Monte Carlo

/// Law of `|η_t|` under the joint evolution from `δ_init ⊗ μ`.
pub fn joint_size_law(
    sp: &TruncatedSpace,
    lat: &SiteLattice,
    chain: &EnvChain,
    p: &ModelParams,
    epsilon: f64,
    init_mask: u32,
    t: f64,
    solver: Solver,
) -> Result<Vec<f64>, averaging_core::Error> {
    let joint = build_joint_generator(sp, lat, chain, p, epsilon)?.adjoint();
    let i = sp
        .index(init_mask)
        .ok_or(averaging_core::Error::InvalidParameter {
            name: "init",
            reason: "initial configuration outside the truncation".into(),
        })?;
    let rho0 = DensityVector::point_mass(sp.len(), i).product(chain.mu());
    let rho = evolve(&rho0, &joint, t, solver.method, solver.tol)?;
    let mut law = vec![0.0; sp.cap() + 1];
    for k in 0..chain.len() {
        for j in 0..sp.len() {
            law[sp.size_of(j)] += rho.values()[k * sp.len() + j];
        }
    }
    Ok(law)
}

fn mc_compare(cfg: &ExperimentConfig) -> Result<Outcome, RunError> {
    let t = cfg.truncation.expect("validated");
    let (sp, lat) = lattice(cfg, t.m, t.n)?;
    let chain = env_chain(cfg)?;
    let p = cfg.model()?;
    let eps = cfg.env.as_ref().expect("validated").epsilon;
    let horizon = cfg.sweep.horizon;
    let mask = initial_mask(cfg);
    let law = joint_size_law(&sp, &lat, &chain, &p, eps, mask, horizon, solver(cfg))?;

    let init = lat.configuration(mask);
    let habitat = Habitat::Lattice {
        lattice: lat.clone(),
        cap: t.n,
    };
    let sim_cfg = SimConfig {
        delta: p.delta,
        seed: cfg.seeds.base,
        ..SimConfig::new(horizon, cfg.sweep.t_grid())
    };
    let ensemble = |epsilon: f64, seed: u64| {
        run_ensemble(cfg.seeds.replicas, seed, |rng| {
            let mut env = ChainEnv::stationary(&chain, epsilon, rng)?;
            simulate(&p, &habitat, &mut env, &init, &sim_cfg, rng)
        })
    };
    let coupled = ensemble(eps, cfg.seeds.base)?;
    let quenched = ensemble(f64::INFINITY, cfg.seeds.base.wrapping_add(1))?;
    let histogram = |ens: &[averaging_core::Trajectory]| {
        let mut h = vec![0u64; t.n + 1];
        for tr in ens {
            if let Some(c) = tr.at(horizon) {
                h[c.len()] += 1;
            }
        }
        h
    };
    let (hc, hq) = (histogram(&coupled), histogram(&quenched));
    let rc = chi2_gof(&hc, &law)?;
    let rq = chi2_gof(&hq, &law)?;

    let mut ens_csv = Vec::new();
    write_ensemble_csv(&mut ens_csv, &coupled, lat.domain()).map_err(RunError::Io)?;
    let tables = vec![
        Table::new(
            "mc_compare.csv",
            &["size", "exact_prob", "coupled_count", "quenched_count"],
            (0..=t.n).map(|k| vec![k.to_string(), f(law[k]), hc[k].to_string(), hq[k].to_string()]),
        ),
        Table {
            file: "ensemble.csv".into(),
            body: String::from_utf8(ens_csv).expect("ascii"),
        },
    ];
    let beta = {
        let (m_bar, l_bar) = averaging_core::fp::lattice_averaged_intensities(&lat, &chain, &p);
        l_bar.iter().zip(&m_bar).map(|(l, m)| l - m).fold(f64::NEG_INFINITY, f64::max)
    };
    let mut checks = vec![Check::above("coupled chi2 p-value", rc.p_value, 1e-3)];
    if beta != 0.0 {
        checks.push(Check::below("quenched control chi2 p-value", rq.p_value, 1e-3));
    }
    Ok(Outcome { tables, checks })
}

fn closed_form(cfg: &ExperimentConfig) -> Result<Outcome, RunError> {
    let dom = cfg.domain()?;
    let n0 = cfg.options.initial.unwrap_or(20);
    let lambda = cfg.options.linear_birth.unwrap_or(1.5);
    let mu = cfg.options.linear_death.unwrap_or(1.0);
    let horizon = cfg.sweep.horizon;
    let times = cfg.sweep.t_grid();
    let init = Configuration::from_points(
        (0..n0)
            .map(|i| Point(vec![dom.side * i as f64 / n0 as f64; dom.dim]))
            .collect(),
    );
    let base = ModelParams {
        m0: mu,
        lambda0: 0.0,
        z: 0.0,
        delta: 0.0,
        a_plus: KernelFunction::density(KernelShape::Gaussian, 0.1 * dom.side, dom.dim)?,
        a_minus: KernelFunction::zero(),
        kappa: KernelFunction::zero(),
        psi: KernelFunction::zero(),
    };
    let cases = [
        ("pure_death", base, -mu),
        ("linear_birth_death", ModelParams { lambda0: lambda, ..base }, lambda - mu),
    ];
    let habitat = Habitat::Continuum(dom);
    let sim_cfg = SimConfig::new(horizon, times.clone());
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    for (i, (name, p, rate)) in cases.iter().enumerate() {
        let ens = run_ensemble(cfg.seeds.replicas, cfg.seeds.base.wrapping_add(i as u64), |rng| {
            let mut env = ContinuumEnv {
                spec: EnvSpec::new(EnvKind::Frozen, 0.0, 1.0)?,
                domain: dom,
                gamma: Configuration::empty(),
            };
            simulate(p, &habitat, &mut env, &init, &sim_cfg, rng)
        })?;
        for &t in &times {
            let e = estimate_moment(&ens, t, 1)?;
            let expected = n0 as f64 * (rate * t).exp();
            rows.push(vec![
                name.to_string(),
                f(t),
                f(e.mean),
                f(e.std_error),
                f(e.ci),
                f(expected),
            ]);
            if t == horizon {
                checks.push(Check {
                    name: format!("{name} mean at t = {t}"),
                    pass: (e.mean - expected).abs() <= e.ci,
                    value: (e.mean - expected).abs(),
                    threshold: e.ci,
                    detail: format!("{} vs {expected}", e.mean),
                });
            }
        }
    }
    Ok(Outcome {
        tables: vec![Table::new(
            "closed_form.csv",
            &["case", "t", "mean", "std_error", "ci", "expected"],
            rows,
        )],
        checks,
    })
}

fn env_ergodic(cfg: &ExperimentConfig) -> Result<Outcome, RunError> {
    let dom = cfg.domain()?;
    let p = cfg.model()?;
    let env = cfg.env.as_ref().expect("validated");
    let kind = match env.kind {
        EnvBlockKind::FreeGlauber => EnvKind::FreeGlauber,
        _ => EnvKind::Resample,
    };
    let spec = EnvSpec::new(kind, cfg.env_z(), env.epsilon)?;
    let x0 = cfg.options.x0.clone().unwrap_or_else(|| vec![0.0; dom.dim]);
    let p = ModelParams { z: spec.z, ..p };
    let m_bar = averaged_rates(&p, dom.dim).m_bar;
    let horizon = cfg.sweep.horizon;
    let mortality = |g: &Configuration| p.m0 + g.iter().map(|w| p.kappa.eval(dom.dist(&x0, &w.0))).sum::<f64>();
    let mut rng = stream(cfg.seeds.base, 0);
    let e = env_ergodic_average(mortality, &spec, &dom, horizon, &mut rng)?;
    Ok(Outcome {
        tables: vec![Table::new(
            "ergodic.csv",
            &["horizon", "epsilon", "mean", "std_error", "ci", "m_bar"],
            [vec![f(horizon), f(env.epsilon), f(e.mean), f(e.std_error), f(e.ci), f(m_bar)]],
        )],
        checks: vec![Check {
            name: "time average of the mortality".into(),
            pass: (e.mean - m_bar).abs() <= e.ci,
            value: (e.mean - m_bar).abs(),
            threshold: e.ci,
            detail: format!("{} vs m_bar = {m_bar}", e.mean),
        }],
    })
}

// ------------------------------------------------------------ semigroup

/// `(a − G)⁻¹ ν` by dense LU, for checking the series.
pub fn dense_resolvent(g: &Generator, a: f64, nu: &[f64]) -> Option<Vec<f64>> {
    let g = g.oriented(Orientation::Forward).to_dense();
    let n = g.len();
    let m = DMatrix::from_fn(n, n, |i, j| if i == j { a - g[i][j] } else { -g[i][j] });
    m.lu().solve(&DVector::from_column_slice(nu)).map(|v| v.iter().copied().collect())
}

fn resolvent_check(cfg: &ExperimentConfig) -> Result<Outcome, RunError> {
    let a = cfg.options.a.unwrap_or(1.0);
    let terms = cfg.options.terms.unwrap_or(5000);
    let mut instances: Vec<(String, Generator)> = vec![(
        "cycle".into(),
        Generator::from_transitions(3, &[(0, 1, 1.0), (1, 2, 2.0), (2, 0, 3.0), (2, 1, 0.5)], &[])?,
    )];
    if let (Some(_), Some(t)) = (&cfg.model, cfg.truncation) {
        let (sp, lat) = lattice(cfg, t.m, t.n)?;
        let p = cfg.model()?;
        let env = match cfg.env.as_ref().map(|e| e.kind) {
            Some(EnvBlockKind::Poisson) | None if p.delta == 0.0 => build_averaged_generator(&sp, &lat, EnvAverage::Poisson, &p)?,
            _ => {
                let chain = env_chain(cfg)?;
                build_averaged_generator(&sp, &lat, EnvAverage::Chain(&chain), &p)?
            }
        };
        instances.push(("logistic".into(), env));
    }
    let sizes = if cfg.sweep.sizes.is_empty() {
        vec![16, 32, 64, 128]
    } else {
        cfg.sweep.sizes.clone()
    };
    let conservative = instances.len();
    for &n in &sizes {
        instances.push((
            format!("explosive_{n}"),
            birth_death_truncation(n, |k| (k * k) as f64, |_| 0.0)?.generator,
        ));
    }
    let results = instances
        .par_iter()
        .map(|(name, g)| {
            let nu: Vec<f64> = if name.starts_with("explosive") {
                let mut v = vec![0.0; g.dim()];
                v[1] = 1.0;
                v
            } else {
                vec![1.0 / g.dim() as f64; g.dim()]
            };
            let sg = SplitGenerator::new(g)?;
            let s = resolvent_series(&sg, a, 1.0, &nu, terms)?;
            let dense = dense_resolvent(g, a, &nu).ok_or(averaging_core::Error::InvalidGenerator(format!(
                "{name}: a - G is singular"
            )))?;
            let diff: f64 = s.values.iter().zip(&dense).map(|(x, y)| (x - y).abs()).sum();
            Ok((diff, s.tail_bound, a * s.values.iter().sum::<f64>()))
        })
        .collect::<Result<Vec<_>, averaging_core::Error>>()?;
    let table = Table::new(
        "resolvent.csv",
        &["instance", "states", "a", "terms", "l1_diff", "tail_bound", "mass_ratio"],
        instances.iter().zip(&results).map(|((name, g), (diff, tail, mass))| {
            vec![
                name.clone(),
                g.dim().to_string(),
                f(a),
                terms.to_string(),
                f(*diff),
                f(*tail),
                f(*mass),
            ]
        }),
    );
    let mut checks: Vec<Check> = instances
        .iter()
        .zip(&results)
        .map(|((name, _), (diff, _, _))| Check::below(format!("{name}: series vs dense solve"), *diff, 1e-8))
        .collect();
    for ((name, _), (_, _, mass)) in instances.iter().zip(&results).take(conservative) {
        checks.push(Check::below(format!("{name}: a·|R(a)nu| = |nu|"), (mass - 1.0).abs(), 1e-8));
    }
    let defects: Vec<f64> = results[conservative..].iter().map(|r| 1.0 - r.2).collect();
    if let Some(&last) = defects.last() {
        checks.push(Check::above("explosive: resolvent mass defect persists", last, 1e-3));
    }
    Ok(Outcome {
        tables: vec![table],
        checks,
    })
}

fn probe(cfg: &ExperimentConfig) -> Result<Outcome, RunError> {
    let sizes = if cfg.sweep.sizes.is_empty() {
        (4..=10).map(|k| 1usize << k).collect()
    } else {
        cfg.sweep.sizes.clone()
    };
    let t = cfg.options.t.unwrap_or(2.0);
    let lb = cfg.options.linear_birth.unwrap_or(1.0);
    let ld = cfg.options.linear_death.unwrap_or(1.0);
    let tol = cfg.options.threshold.unwrap_or(1e-6);
    let family = |birth: &(dyn Fn(usize) -> f64 + Sync), death: &(dyn Fn(usize) -> f64 + Sync)| {
        sizes
            .par_iter()
            .map(|&n| birth_death_truncation(n, birth, death))
            .collect::<Result<Vec<_>, _>>()
    };
    let linear = family(&|k| lb * k as f64, &|k| ld * k as f64)?;
    let explosive = family(&|k| (k * k) as f64, &|_| 0.0)?;
    let (rl, re) = rayon::join(
        || stochasticity_probe(&linear, t, 1, tol),
        || stochasticity_probe(&explosive, t, 1, tol),
    );
    let (rl, re) = (rl?, re?);
    let rows = [("linear", &rl), ("explosive", &re)]
        .into_iter()
        .flat_map(|(name, r)| {
            r.rows
                .iter()
                .map(move |row| vec![name.to_string(), row.size.to_string(), f(row.t), f(row.defect)])
        });
    let table = Table::new("probe.csv", &["model", "N", "t", "defect"], rows);
    let last = |r: &averaging_core::semigroup::ProbeReport| r.rows.last().map_or(f64::NAN, |x| x.defect);
    let checks = vec![
        Check::below(format!("linear defect at N = {}", sizes.last().unwrap()), last(&rl), tol),
        Check::flag("linear verdict", rl.verdict == "stochastic", rl.verdict),
        Check::flag("linear defects monotone", rl.monotone, format!("{:?}", rl.rows.iter().map(|r| r.defect).collect::<Vec<_>>())),
        Check::flag("explosive verdict", re.verdict == "possible explosion", re.verdict),
        Check::above("explosive extrapolated defect", re.extrapolated_defect, tol),
    ];
    Ok(Outcome {
        tables: vec![table],
        checks,
    })
}
