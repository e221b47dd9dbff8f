//! Gillespie engine with per-particle rate caches.

use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, Normal, StandardNormal};

use crate::config_space::{Configuration, Domain, Point};
use crate::environment::{env_invariant_sample, EnvKind, EnvSpec};
use crate::error::{invalid, Error, Result};
use crate::fp::LatticeKernels;
use crate::logistic::{damping, KernelFunction, KernelShape, ModelParams};

use super::{ContinuumEnv, EnvUpdate, Environment, EventCounts, Habitat, InitialCondition, SimConfig, Trajectory};

/// Events between two cache audits.
pub const AUDIT_EVERY: u64 = 10_000;
/// Relative tolerance of the audit.
pub const AUDIT_TOL: f64 = 1e-9;

/// Per-particle rate contributions with running totals.
#[derive(Debug, Clone, Default)]
pub struct RateCache {
    pts: Vec<Point>,
    /// Lattice site of each particle (lattice habitat only).
    sites: Vec<usize>,
    occupied: u32,
    env_m: Vec<f64>,
    env_l: Vec<f64>,
    comp: Vec<f64>,
    sum_env_m: f64,
    sum_env_l: f64,
    sum_comp: f64,
}

struct Model<'a> {
    p: &'a ModelParams,
    dom: &'a Domain,
    lattice: Option<(LatticeKernels, usize)>,
}

impl Model<'_> {
    #[inline]
    fn kernel_sum(&self, k: &KernelFunction, x: &[f64], pts: &[Point]) -> f64 {
        if k.is_zero() {
            return 0.0;
        }
        pts.iter().map(|w| k.eval(self.dom.dist(x, &w.0))).sum()
    }

    #[inline]
    fn competition(&self, a: (usize, &Point), b: (usize, &Point)) -> f64 {
        match &self.lattice {
            Some((k, _)) => k.competition(a.0, b.0),
            None => self.p.a_minus.eval(self.dom.dist(&a.1 .0, &b.1 .0)),
        }
    }
}

impl RateCache {
    pub fn len(&self) -> usize {
        self.pts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pts.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.pts
    }

    fn death_total(&self, p: &ModelParams) -> f64 {
        self.len() as f64 * p.m0 + self.sum_env_m + self.sum_comp
    }

    fn birth_total(&self, p: &ModelParams) -> f64 {
        self.len() as f64 * p.lambda0 + self.sum_env_l
    }

    fn death(&self, p: &ModelParams, i: usize) -> f64 {
        p.m0 + self.env_m[i] + self.comp[i]
    }

    fn fecundity(&self, p: &ModelParams, i: usize) -> f64 {
        p.lambda0 + self.env_l[i]
    }

    fn site(&self, i: usize) -> usize {
        self.sites.get(i).copied().unwrap_or(usize::MAX)
    }

    fn add(&mut self, m: &Model<'_>, gamma: &Configuration, x: Point, site: Option<usize>) {
        let em = m.kernel_sum(&m.p.kappa, &x.0, gamma.points());
        let el = m.kernel_sum(&m.p.psi, &x.0, gamma.points());
        let mut c = 0.0;
        if !m.p.a_minus.is_zero() {
            let s = site.unwrap_or(usize::MAX);
            for j in 0..self.pts.len() {
                let a = m.competition((s, &x), (self.site(j), &self.pts[j]));
                self.comp[j] += a;
                c += a;
            }
        }
        if let Some(s) = site {
            self.sites.push(s);
            self.occupied |= 1 << s;
        }
        self.pts.push(x);
        self.env_m.push(em);
        self.env_l.push(el);
        self.comp.push(c);
        self.sum_env_m += em;
        self.sum_env_l += el;
        self.sum_comp += 2.0 * c;
    }

    fn remove(&mut self, m: &Model<'_>, i: usize) -> Point {
        if !m.p.a_minus.is_zero() {
            let si = self.site(i);
            for j in 0..self.pts.len() {
                if j != i {
                    let a = m.competition((si, &self.pts[i]), (self.site(j), &self.pts[j]));
                    self.comp[j] -= a;
                }
            }
        }
        self.sum_env_m -= self.env_m[i];
        self.sum_env_l -= self.env_l[i];
        self.sum_comp -= 2.0 * self.comp[i];
        self.env_m.swap_remove(i);
        self.env_l.swap_remove(i);
        self.comp.swap_remove(i);
        if !self.sites.is_empty() {
            let s = self.sites.swap_remove(i);
            self.occupied &= !(1 << s);
        }
        let x = self.pts.swap_remove(i);
        if self.pts.is_empty() {
            self.sum_env_m = 0.0;
            self.sum_env_l = 0.0;
            self.sum_comp = 0.0;
        }
        x
    }

    fn env_changed(&mut self, m: &Model<'_>, gamma: &Configuration, update: &EnvUpdate) {
        match update {
            EnvUpdate::Added(w) | EnvUpdate::Removed(w) => {
                let sign = if matches!(update, EnvUpdate::Added(_)) { 1.0 } else { -1.0 };
                let (kz, pz) = (m.p.kappa.is_zero(), m.p.psi.is_zero());
                if kz && pz {
                    return;
                }
                for i in 0..self.pts.len() {
                    let r = m.dom.dist(&self.pts[i].0, &w.0);
                    if !kz {
                        let v = sign * m.p.kappa.eval(r);
                        self.env_m[i] += v;
                        self.sum_env_m += v;
                    }
                    if !pz {
                        let v = sign * m.p.psi.eval(r);
                        self.env_l[i] += v;
                        self.sum_env_l += v;
                    }
                }
            }
            EnvUpdate::Replaced => self.refresh_env(m, gamma),
        }
    }

    fn refresh_env(&mut self, m: &Model<'_>, gamma: &Configuration) {
        for i in 0..self.pts.len() {
            self.env_m[i] = m.kernel_sum(&m.p.kappa, &self.pts[i].0, gamma.points());
            self.env_l[i] = m.kernel_sum(&m.p.psi, &self.pts[i].0, gamma.points());
        }
        self.sum_env_m = self.env_m.iter().sum();
        self.sum_env_l = self.env_l.iter().sum();
    }

    /// Recomputes everything from scratch; fails if the cached total rate
    /// drifted by more than [`AUDIT_TOL`] relative.
    fn audit(&mut self, m: &Model<'_>, gamma: &Configuration) -> Result<()> {
        let cached = self.death_total(m.p) + self.birth_total(m.p);
        let n = self.pts.len();
        self.refresh_env(m, gamma);
        for i in 0..n {
            self.comp[i] = 0.0;
            if !m.p.a_minus.is_zero() {
                for j in 0..n {
                    if j != i {
                        self.comp[i] += m.competition((self.site(i), &self.pts[i]), (self.site(j), &self.pts[j]));
                    }
                }
            }
        }
        self.sum_comp = self.comp.iter().sum();
        let fresh = self.death_total(m.p) + self.birth_total(m.p);
        if (cached - fresh).abs() > AUDIT_TOL * fresh.abs().max(f64::MIN_POSITIVE) && (cached - fresh).abs() > 1e-300 {
            return Err(Error::CacheAudit { cached, fresh });
        }
        Ok(())
    }

    fn pick(&self, target: f64, rate: impl Fn(usize) -> f64) -> usize {
        let mut acc = 0.0;
        for i in 0..self.pts.len() {
            acc += rate(i);
            if target < acc {
                return i;
            }
        }
        self.pts.len() - 1
    }

    fn configuration(&self) -> Configuration {
        Configuration::from_points(self.pts.clone())
    }
}

/// Offspring displacement drawn from the density `a⁺`.
fn displacement<R: Rng + ?Sized>(k: &KernelFunction, dim: usize, rng: &mut R) -> Vec<f64> {
    let direction = |rng: &mut R| -> Vec<f64> {
        if dim == 1 {
            return vec![if rng.random::<bool>() { 1.0 } else { -1.0 }];
        }
        loop {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
            let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
            if norm > 0.0 {
                return v.into_iter().map(|c| c / norm).collect();
            }
        }
    };
    match k.shape {
        KernelShape::Gaussian => {
            let n = Normal::new(0.0, k.range).expect("positive range");
            (0..dim).map(|_| n.sample(rng)).collect()
        }
        KernelShape::Tophat => {
            let r = k.range * rng.random::<f64>().powf(1.0 / dim as f64);
            direction(rng).into_iter().map(|c| c * r).collect()
        }
        KernelShape::Exponential => {
            let r = Gamma::new(dim as f64, k.range).expect("positive range").sample(rng);
            direction(rng).into_iter().map(|c| c * r).collect()
        }
    }
}

/// Runs the coupled system in `env` from `init` up to the horizon.
pub fn simulate<E, R>(
    p: &ModelParams,
    habitat: &Habitat,
    env: &mut E,
    init: &Configuration,
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<Trajectory>
where
    E: Environment,
    R: Rng + ?Sized,
{
    cfg.check()?;
    let dom = habitat.domain();
    let lattice = match habitat {
        Habitat::Lattice { lattice, cap } => {
            if *cap > lattice.len() {
                return Err(invalid("N", format!("cap {cap} exceeds {} sites", lattice.len())));
            }
            Some((LatticeKernels::new(lattice, p), *cap))
        }
        Habitat::Continuum(_) => None,
    };
    let model = Model { p, dom, lattice };
    let mut cache = RateCache::default();
    for x in init {
        let site = match habitat {
            Habitat::Lattice { lattice, .. } => {
                let s = lattice.index_of(x).ok_or_else(|| Error::NotMember(x.to_string()))?;
                if cache.occupied >> s & 1 == 1 {
                    return Err(invalid("init", format!("site {s} occupied twice")));
                }
                Some(s)
            }
            Habitat::Continuum(_) => None,
        };
        cache.add(&model, env.gamma(), x.clone(), site);
    }
    if let Some((_, cap)) = &model.lattice {
        if cache.len() > *cap {
            return Err(invalid("init", "more points than the cap"));
        }
    }

    let mut counts = EventCounts::default();
    let mut states = Vec::with_capacity(cfg.record_times.len());
    let mut next_record = 0;
    let mut t = 0.0;
    let mut exploded = cache.len() > cfg.max_population;
    let mut events = 0u64;
    while !exploded {
        let r_sys = cache.death_total(p) + cache.birth_total(p);
        let r_env = env.rate();
        let total = r_sys + r_env;
        let dt = if total > 0.0 {
            Exp::new(total).expect("positive rate").sample(rng)
        } else {
            f64::INFINITY
        };
        let t_next = t + dt;
        while next_record < cfg.record_times.len() && cfg.record_times[next_record] < t_next {
            states.push(cache.configuration());
            next_record += 1;
        }
        if t_next > cfg.horizon {
            break;
        }
        t = t_next;
        events += 1;
        let u = rng.random::<f64>() * total;
        if u < r_env {
            let update = env.fire(rng);
            cache.env_changed(&model, env.gamma(), &update);
            counts.environment += 1;
        } else if cfg.delta > 0.0 && rng.random::<f64>() >= damping(r_sys, cfg.delta) {
            counts.damped += 1;
        } else {
            let v = u - r_env;
            let d_total = cache.death_total(p);
            if v < d_total {
                let i = cache.pick(v, |i| cache.death(p, i));
                cache.remove(&model, i);
                counts.deaths += 1;
            } else {
                let parent = cache.pick(v - d_total, |i| cache.fecundity(p, i));
                match (&model.lattice, habitat) {
                    (Some((kernels, cap)), Habitat::Lattice { lattice, .. }) => {
                        let from = cache.sites[parent];
                        let u = rng.random::<f64>();
                        let mut acc = 0.0;
                        let mut to = lattice.len() - 1;
                        for y in 0..lattice.len() {
                            acc += kernels.dispersal(from, y);
                            if u < acc {
                                to = y;
                                break;
                            }
                        }
                        if cache.occupied >> to & 1 == 1 || cache.len() >= *cap {
                            counts.suppressed += 1;
                        } else {
                            cache.add(&model, env.gamma(), lattice.site(to).clone(), Some(to));
                            counts.births += 1;
                        }
                    }
                    _ => {
                        let x = &cache.pts[parent];
                        let shift = displacement(&p.a_plus, dom.dim, rng);
                        let y = Point(x.0.iter().zip(&shift).map(|(a, b)| dom.wrap(a + b)).collect());
                        cache.add(&model, env.gamma(), y, None);
                        counts.births += 1;
                    }
                }
                if cache.len() > cfg.max_population {
                    exploded = true;
                }
            }
        }
        if events.is_multiple_of(AUDIT_EVERY) {
            cache.audit(&model, env.gamma())?;
            counts.audits += 1;
        }
    }
    Ok(Trajectory {
        seed: cfg.seed,
        replica: 0,
        record_times: cfg.record_times.clone(),
        states,
        counts,
        exploded,
    })
}

/// Continuum simulation in an environment started from its invariant law.
pub fn simulate_coupled<R: Rng + ?Sized>(
    p: &ModelParams,
    env: &EnvSpec,
    init: &InitialCondition,
    cfg: &SimConfig,
    dom: &Domain,
    rng: &mut R,
) -> Result<Trajectory> {
    let start = env_invariant_sample(env, dom, rng)?;
    let eta = init.sample(dom, rng)?;
    let mut e = ContinuumEnv {
        spec: *env,
        domain: *dom,
        gamma: start.gamma,
    };
    simulate(p, &Habitat::Continuum(*dom), &mut e, &eta, cfg, rng)
}

/// Continuum simulation of the averaged process: rates `m̄`, `λ̄`, no environment.
pub fn simulate_averaged<R: Rng + ?Sized>(
    p: &ModelParams,
    init: &InitialCondition,
    cfg: &SimConfig,
    dom: &Domain,
    rng: &mut R,
) -> Result<Trajectory> {
    let eta = init.sample(dom, rng)?;
    let mut e = ContinuumEnv {
        spec: EnvSpec {
            kind: EnvKind::Frozen,
            z: 0.0,
            epsilon: 1.0,
        },
        domain: *dom,
        gamma: Configuration::empty(),
    };
    simulate(&p.averaged(dom.dim), &Habitat::Continuum(*dom), &mut e, &eta, cfg, rng)
}
