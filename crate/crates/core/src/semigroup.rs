//! Minimal semigroups on finite truncations: the resolvent perturbation
//! series and mass-defect probes for stochasticity.

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::fp::{evolve, DensityVector, Generator, Method, Orientation};

/// Generator split as `−q + B`: a diagonal of total rates and a nonnegative
/// off-diagonal kernel, stored in forward form (`B[i][j]` = rate `j → i`).
#[derive(Debug, Clone, PartialEq)]
pub struct SplitGenerator {
    q: Vec<f64>,
    b: Generator,
}

impl SplitGenerator {
    /// Splits a generator of either orientation; losses to a cemetery stay
    /// in `q` only, so column sums of `B` may fall short of `q`.
    pub fn new(g: &Generator) -> Result<Self> {
        g.audit(1e-12)?;
        let q = (0..g.dim()).map(|i| g.outflow(i)).collect();
        Ok(Self {
            q,
            b: g.oriented(Orientation::Forward),
        })
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    /// `(Bν)_i = Σ_j B[i][j] ν_j`.
    pub fn apply_b(&self, nu: &[f64], out: &mut [f64]) {
        for i in 0..self.dim() {
            out[i] = self.b.row(i).map(|(j, r)| r * nu[j]).sum();
        }
    }

    /// `Bν(Γ) − ∫q dν`: zero for conservative generators, negative otherwise.
    pub fn mass_balance(&self, nu: &[f64]) -> f64 {
        let mut out = vec![0.0; self.dim()];
        self.apply_b(nu, &mut out);
        out.iter().sum::<f64>() - self.q.iter().zip(nu).map(|(q, v)| q * v).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolventSeries {
    pub values: Vec<f64>,
    pub terms: usize,
    /// Bound on the L¹ norm of the omitted terms.
    pub tail_bound: f64,
}

/// Partial sum `R(a) Σ_{n≤N} rⁿ (B R(a))ⁿ ν` with `R(a) = diag(1/(a+q))`.
pub fn resolvent_series(sg: &SplitGenerator, a: f64, r: f64, nu: &[f64], n_terms: usize) -> Result<ResolventSeries> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(invalid("a", format!("must be positive, got {a}")));
    }
    if !(r > 0.0 && r <= 1.0) {
        return Err(invalid("r", format!("must lie in (0, 1], got {r}")));
    }
    if nu.len() != sg.dim() {
        return Err(Error::DimensionMismatch {
            expected: sg.dim(),
            got: nu.len(),
        });
    }
    if nu.iter().any(|v| !(*v >= 0.0)) {
        return Err(invalid("nu", "must be nonnegative"));
    }
    let inv: Vec<f64> = sg.q.iter().map(|q| 1.0 / (a + q)).collect();
    let mut term: Vec<f64> = nu.iter().zip(&inv).map(|(v, i)| v * i).collect();
    let mut sum = term.clone();
    let mut next = vec![0.0; sg.dim()];
    for _ in 0..n_terms {
        sg.apply_b(&term, &mut next);
        for ((t, n), i) in term.iter_mut().zip(&next).zip(&inv) {
            *t = r * n * i;
        }
        for (s, t) in sum.iter_mut().zip(&term) {
            *s += t;
        }
    }
    // ‖rBR‖₁ ≤ r · max_j q_j/(a+q_j) < 1
    let c = r * sg.q.iter().map(|q| q / (a + q)).fold(0.0, f64::max);
    let norm_r = inv.iter().fold(0.0, |m: f64, v| m.max(*v));
    let nu_norm: f64 = nu.iter().sum();
    let last: f64 = term.iter().sum();
    // remaining terms are bounded geometrically from the last one, and also
    // from the a priori estimate ‖R‖ cⁿ ‖ν‖
    let tail_bound = if c < 1.0 {
        (last * c / (1.0 - c)).min(norm_r * nu_norm * c.powi(n_terms as i32 + 1) / (1.0 - c))
    } else {
        f64::INFINITY
    };
    Ok(ResolventSeries {
        values: sum,
        terms: n_terms + 1,
        tail_bound,
    })
}

/// One truncation of a growing family: a backward generator whose boundary
/// states lose their escaping rate to a cemetery.
#[derive(Debug, Clone, PartialEq)]
pub struct Truncation {
    pub size: usize,
    pub generator: Generator,
}

/// Birth–death chain on `{0, …, n}`; births out of `n` leave to the cemetery.
pub fn birth_death_truncation(n: usize, birth: impl Fn(usize) -> f64, death: impl Fn(usize) -> f64) -> Result<Truncation> {
    let mut jumps = Vec::with_capacity(2 * n);
    let mut losses = Vec::new();
    for k in 0..=n {
        let b = birth(k);
        if k < n {
            jumps.push((k, k + 1, b));
        } else if b > 0.0 {
            losses.push((k, b));
        }
        if k > 0 {
            jumps.push((k, k - 1, death(k)));
        }
    }
    Ok(Truncation {
        size: n,
        generator: Generator::from_transitions(n + 1, &jumps, &losses)?,
    })
}

fn check_nested(small: &Generator, large: &Generator) -> Result<()> {
    let small = small.oriented(Orientation::Backward);
    let large = large.oriented(Orientation::Backward);
    if small.dim() > large.dim() {
        return Err(Error::NotNested(format!("{} states after {}", large.dim(), small.dim())));
    }
    for i in 0..small.dim() {
        if small.diagonal()[i] != large.diagonal()[i] {
            return Err(Error::NotNested(format!("total rate of state {i} differs")));
        }
        for (j, r) in small.row(i) {
            if large.rate(i, j) != r {
                return Err(Error::NotNested(format!("rate {i} → {j} differs")));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DefectRow {
    pub size: usize,
    pub t: f64,
    pub defect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    pub rows: Vec<DefectRow>,
    pub extrapolated_defect: f64,
    /// Defects are nonincreasing in the truncation size (up to 1e-12).
    pub monotone: bool,
    pub tol: f64,
    pub verdict: &'static str,
}

/// Mass defect `1 − ‖ρ_t‖` of each truncation started from `init`,
/// with an Aitken extrapolation of the limit.
pub fn stochasticity_probe(family: &[Truncation], t: f64, init: usize, tol: f64) -> Result<ProbeReport> {
    if family.is_empty() {
        return Err(invalid("family", "must contain at least one truncation"));
    }
    for w in family.windows(2) {
        if w[0].size >= w[1].size {
            return Err(Error::NotNested("sizes must increase".into()));
        }
        check_nested(&w[0].generator, &w[1].generator)?;
    }
    let solve_tol = (tol * 1e-3).max(1e-14);
    let rows = family
        .iter()
        .map(|tr| {
            let g = tr.generator.oriented(Orientation::Forward);
            if init >= g.dim() {
                return Err(invalid("init", format!("state {init} outside truncation {}", tr.size)));
            }
            let rho = evolve(&DensityVector::point_mass(g.dim(), init), &g, t, Method::Uniformization, solve_tol)?;
            Ok(DefectRow {
                size: tr.size,
                t,
                defect: (1.0 - rho.mass()).max(0.0),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let d: Vec<f64> = rows.iter().map(|r| r.defect).collect();
    let monotone = d.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    let last = *d.last().expect("nonempty");
    let extrapolated_defect = if d.len() >= 3 {
        let (x0, x1, x2) = (d[d.len() - 3], d[d.len() - 2], d[d.len() - 1]);
        let denom = x2 - 2.0 * x1 + x0;
        if denom.abs() > 1e-300 {
            (x2 - (x2 - x1).powi(2) / denom).clamp(0.0, last)
        } else {
            last
        }
    } else {
        last
    };
    let verdict = if extrapolated_defect < tol {
        "stochastic"
    } else {
        "possible explosion"
    };
    Ok(ProbeReport {
        rows,
        extrapolated_defect,
        monotone,
        tol,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cycle() -> SplitGenerator {
        let g = Generator::from_transitions(3, &[(0, 1, 1.0), (1, 2, 2.0), (2, 0, 3.0), (2, 1, 0.5)], &[]).unwrap();
        SplitGenerator::new(&g).unwrap()
    }

    #[test]
    fn no_kernel_gives_plain_resolvent() {
        let g = Generator::from_transitions(2, &[], &[(0, 1.0), (1, 3.0)]).unwrap();
        let sg = SplitGenerator::new(&g).unwrap();
        let s = resolvent_series(&sg, 1.0, 1.0, &[0.4, 0.6], 5).unwrap();
        assert_eq!(s.values, vec![0.4 / 2.0, 0.6 / 4.0]);
    }

    #[test]
    fn conservative_mass_balance() {
        let sg = cycle();
        assert!(sg.mass_balance(&[0.2, 0.3, 0.5]).abs() < 1e-15);
        // resolvent of a conservative generator preserves mass: a‖(a−G)⁻¹ν‖ = ‖ν‖
        let s = resolvent_series(&sg, 1.0, 1.0, &[0.2, 0.3, 0.5], 400).unwrap();
        assert!((s.values.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        assert!(s.tail_bound < 1e-10);
    }

    #[test]
    fn monotone_in_terms_and_r() {
        let sg = cycle();
        let nu = [1.0, 0.0, 0.0];
        let mut prev = vec![0.0; 3];
        for n in 0..30 {
            let s = resolvent_series(&sg, 0.5, 1.0, &nu, n).unwrap();
            assert!(s.values.iter().zip(&prev).all(|(a, b)| a >= b));
            prev = s.values;
        }
        let lo = resolvent_series(&sg, 0.5, 0.5, &nu, 30).unwrap();
        let hi = resolvent_series(&sg, 0.5, 0.9, &nu, 30).unwrap();
        assert!(lo.values.iter().zip(&hi.values).all(|(a, b)| a <= b));
        assert!(resolvent_series(&sg, 0.0, 1.0, &nu, 3).is_err());
        assert!(resolvent_series(&sg, 1.0, 1.5, &nu, 3).is_err());
    }

    #[test]
    fn zero_generator_has_no_defect() {
        let family: Vec<Truncation> = [4, 8, 16]
            .iter()
            .map(|&n| birth_death_truncation(n, |_| 0.0, |_| 0.0).unwrap())
            .collect();
        let r = stochasticity_probe(&family, 1.0, 1, 1e-6).unwrap();
        assert!(r.rows.iter().all(|row| row.defect == 0.0));
        assert_eq!(r.verdict, "stochastic");
    }

    #[test]
    fn rejects_non_nested() {
        let a = birth_death_truncation(4, |k| k as f64, |k| k as f64).unwrap();
        let b = birth_death_truncation(8, |k| 2.0 * k as f64, |k| k as f64).unwrap();
        assert!(matches!(stochasticity_probe(&[a.clone(), b], 1.0, 1, 1e-6), Err(Error::NotNested(_))));
        assert!(stochasticity_probe(&[a.clone(), a], 1.0, 1, 1e-6).is_err());
    }

    #[test]
    fn truncation_shape() {
        let t = birth_death_truncation(2, |k| k as f64 + 1.0, |k| k as f64).unwrap();
        let g = &t.generator;
        assert_eq!(g.rate(0, 1), 1.0);
        assert_eq!(g.rate(2, 1), 2.0);
        assert_eq!(g.loss(2), 3.0);
        assert_eq!(g.outflow(2), 5.0);
    }
}
