//! Transient solution of `dρ/dt = Gρ` on a truncated space.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

use super::{Generator, Orientation};

/// Largest `Λt` accepted by uniformization.
pub const UNIFORMIZATION_CAP: f64 = 1e7;
/// Largest number of accepted plus rejected RK steps.
pub const RK_STEP_CAP: usize = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Uniformization,
    RkAdaptive,
}

/// Nonnegative sub-probability vector over a truncated space.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct DensityVector {
    values: Vec<f64>,
}

impl DensityVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(invalid("rho", format!("entries must be finite and nonnegative, got {v}")));
        }
        let d = Self { values };
        if d.mass() > 1.0 + 1e-12 {
            return Err(invalid("rho", format!("mass {} exceeds 1", d.mass())));
        }
        Ok(d)
    }

    pub fn point_mass(n: usize, i: usize) -> Self {
        let mut values = vec![0.0; n];
        values[i] = 1.0;
        Self { values }
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            values: vec![1.0 / n as f64; n],
        }
    }

    /// Product density `ρ(η)·μ_k`, indexed `k·|ρ| + η`.
    pub fn product(&self, mu: &[f64]) -> Self {
        let values = mu.iter().flat_map(|&m| self.values.iter().map(move |&r| r * m)).collect();
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum()
    }

    /// `Σ f(i) ρ(i)`.
    pub fn expect(&self, f: &[f64]) -> f64 {
        self.values.iter().zip(f).map(|(r, f)| r * f).sum()
    }

    pub fn l1_distance(&self, other: &Self) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).sum()
    }
}

/// `ρ_t = e^{tG} ρ_0` for a forward generator.
pub fn evolve(rho0: &DensityVector, g: &Generator, t: f64, method: Method, tol: f64) -> Result<DensityVector> {
    if g.orientation() != Orientation::Forward {
        return Err(Error::InvalidGenerator("densities evolve under the forward generator".into()));
    }
    let values = propagate(rho0.values(), g, t, method, tol)?;
    // uniformization is positive by construction; RK rounding can leave tiny negatives
    Ok(DensityVector { values })
}

/// Evolves to each time of an increasing grid, restarting from the previous point.
pub fn evolve_grid(
    rho0: &DensityVector,
    g: &Generator,
    times: &[f64],
    method: Method,
    tol: f64,
) -> Result<Vec<DensityVector>> {
    let mut out = Vec::with_capacity(times.len());
    let mut prev_t = 0.0;
    let mut cur = rho0.clone();
    for &t in times {
        if !(t >= prev_t) {
            return Err(invalid("t_grid", "times must be nonnegative and nondecreasing"));
        }
        // split the tolerance so the sum over the grid stays within `tol`
        cur = evolve(&cur, g, t - prev_t, method, tol / times.len().max(1) as f64)?;
        prev_t = t;
        out.push(cur.clone());
    }
    Ok(out)
}

/// `x_t = e^{tA} x` for the matrix as stored, either orientation.
///
/// The tolerance is measured in the norm the matrix contracts: L¹ for
/// forward generators, sup for backward ones.
pub fn propagate(x: &[f64], g: &Generator, t: f64, method: Method, tol: f64) -> Result<Vec<f64>> {
    if x.len() != g.dim() {
        return Err(Error::DimensionMismatch {
            expected: g.dim(),
            got: x.len(),
        });
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(invalid("t", format!("must be finite and nonnegative, got {t}")));
    }
    if !(tol > 0.0) {
        return Err(invalid("tol", "must be positive"));
    }
    if t == 0.0 || g.max_outflow() == 0.0 {
        return Ok(x.to_vec());
    }
    let norm = match g.orientation() {
        Orientation::Forward => x.iter().map(|v| v.abs()).sum::<f64>(),
        Orientation::Backward => x.iter().fold(0.0, |m: f64, v| m.max(v.abs())),
    };
    if norm == 0.0 {
        return Ok(x.to_vec());
    }
    match method {
        Method::Uniformization => uniformization(x, g, t, tol / norm, norm),
        Method::RkAdaptive => dormand_prince(x, g, t, tol),
    }
}

/// Poisson(`lt`) weights on the window `[left, left + len)` outside which
/// the mass is below `tail`, computed outward from the mode in linear scale
/// and normalized by their own sum (Fox–Glynn style); relative errors stay
/// at a few ulps times the distance from the mode.
fn poisson_window(lt: f64, tail: f64) -> (usize, Vec<f64>) {
    let mode = lt.floor() as usize;
    // beyond the cutoff the ratios are ≤ 1 − O(1/√lt), so the omitted mass
    // is at most cutoff·O(√lt) relative to the mode weight
    let cutoff = (tail / (1.0 + lt.sqrt())).max(1e-300);
    let mut right = vec![1.0];
    let mut w = 1.0;
    let mut k = mode;
    while w >= cutoff {
        k += 1;
        w *= lt / k as f64;
        right.push(w);
    }
    let mut left = Vec::new();
    let mut w = 1.0;
    let mut k = mode;
    while k > 0 && w >= cutoff {
        w *= k as f64 / lt;
        k -= 1;
        left.push(w);
    }
    let start = mode - left.len();
    left.reverse();
    left.extend(right);
    // sum from the small ends inward
    let mut sorted = left.clone();
    sorted.sort_by(f64::total_cmp);
    let total: f64 = sorted.iter().sum();
    for v in &mut left {
        *v /= total;
    }
    (start, left)
}

fn uniformization(x: &[f64], g: &Generator, t: f64, rel_tol: f64, norm: f64) -> Result<Vec<f64>> {
    let lambda = g.max_outflow();
    let lt = lambda * t;
    if lt > UNIFORMIZATION_CAP {
        return Err(Error::ToleranceNotReached {
            tol: rel_tol * norm,
            cap: UNIFORMIZATION_CAP as usize,
            residual: 1.0,
        });
    }
    let (first, weights) = poisson_window(lt, 1e-3 * rel_tol);
    let n = x.len();
    let mut v = x.to_vec();
    let mut gv = vec![0.0; n];
    let mut out = vec![0.0; n];
    let mut cum = 0.0f64;
    let last = first + weights.len() - 1;
    for k in 0..=last {
        if k > 0 {
            // v ← (I + G/Λ) v
            g.apply(&v, &mut gv);
            for (vi, gi) in v.iter_mut().zip(&gv) {
                *vi += gi / lambda;
            }
        }
        if k >= first {
            let w = weights[k - first];
            for (o, vi) in out.iter_mut().zip(&v) {
                *o += w * vi;
            }
            cum += w;
        }
    }
    // the rounding remainder goes to the last iterate, which keeps
    // stationary vectors exact and conservative mass at 1
    let rest = 1.0 - cum;
    for (o, vi) in out.iter_mut().zip(&v) {
        *o += rest * vi;
    }
    Ok(out)
}

fn dormand_prince(x: &[f64], g: &Generator, t: f64, tol: f64) -> Result<Vec<f64>> {
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];

    let n = x.len();
    let mut y = x.to_vec();
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    let mut stage = vec![0.0; n];
    let mut y5 = vec![0.0; n];
    let mut now = 0.0;
    let mut h = (0.5 / g.max_outflow()).min(t);
    // local error per unit time, so the accumulated error stays below tol
    let err_rate = tol / t;
    g.apply(&y, &mut k[0]);
    for _ in 0..RK_STEP_CAP {
        if now >= t {
            return Ok(y);
        }
        h = h.min(t - now);
        for s in 1..7 {
            for i in 0..n {
                let mut acc = y[i];
                for (j, a) in A[s].iter().enumerate().take(s) {
                    acc += h * a * k[j][i];
                }
                stage[i] = acc;
            }
            g.apply(&stage, &mut k[s]);
        }
        let mut err = 0.0;
        for i in 0..n {
            let mut hi = y[i];
            let mut e = 0.0;
            for s in 0..7 {
                hi += h * B5[s] * k[s][i];
                e += h * (B5[s] - B4[s]) * k[s][i];
            }
            y5[i] = hi;
            err += e.abs();
        }
        let allowed = err_rate * h;
        if err <= allowed || h <= 1e-14 * t {
            now += h;
            std::mem::swap(&mut y, &mut y5);
            // first-same-as-last: the last stage is the derivative at the new point
            k.swap(0, 6);
        }
        let factor = if err == 0.0 { 5.0 } else { 0.9 * (allowed / err).powf(0.2) };
        h *= factor.clamp(0.2, 5.0);
    }
    Err(Error::ToleranceNotReached {
        tol,
        cap: RK_STEP_CAP,
        residual: t - now,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn death(m0: f64) -> Generator {
        Generator::from_transitions(2, &[(1, 0, m0)], &[]).unwrap().adjoint()
    }

    #[test]
    fn zero_generator_is_identity() {
        let g = Generator::zero(3).adjoint();
        let rho = DensityVector::new(vec![0.2, 0.3, 0.5]).unwrap();
        for m in [Method::Uniformization, Method::RkAdaptive] {
            assert_eq!(evolve(&rho, &g, 4.0, m, 1e-10).unwrap(), rho);
        }
    }

    #[test]
    fn two_state_death() {
        let g = death(1.0);
        let rho = DensityVector::point_mass(2, 1);
        for m in [Method::Uniformization, Method::RkAdaptive] {
            let out = evolve(&rho, &g, 1.0, m, 1e-12).unwrap();
            assert!((out.values()[1] - (-1.0f64).exp()).abs() < 1e-11, "{m:?}");
            assert!((out.mass() - 1.0).abs() < 1e-11);
        }
    }

    #[test]
    fn rejects_backward_and_bad_input() {
        let g = death(1.0);
        let rho = DensityVector::point_mass(2, 1);
        assert!(evolve(&rho, &g.adjoint(), 1.0, Method::Uniformization, 1e-9).is_err());
        assert!(evolve(&rho, &g, -1.0, Method::Uniformization, 1e-9).is_err());
        assert!(DensityVector::new(vec![0.7, 0.7]).is_err());
        assert!(DensityVector::new(vec![-0.1]).is_err());
    }

    #[test]
    fn cap_reports_residual() {
        let g = death(1e8);
        let rho = DensityVector::point_mass(2, 1);
        match evolve(&rho, &g, 1.0, Method::Uniformization, 1e-9) {
            Err(Error::ToleranceNotReached { .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn cemetery_loses_mass() {
        let g = Generator::from_transitions(1, &[], &[(0, 2.0)]).unwrap().adjoint();
        let out = evolve(&DensityVector::point_mass(1, 0), &g, 0.5, Method::Uniformization, 1e-12).unwrap();
        assert!((out.mass() - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn grid_matches_direct() {
        let g = Generator::from_transitions(3, &[(0, 1, 1.0), (1, 2, 2.0), (2, 0, 0.5), (1, 0, 0.3)], &[])
            .unwrap()
            .adjoint();
        let rho = DensityVector::point_mass(3, 0);
        let grid = evolve_grid(&rho, &g, &[0.0, 0.5, 1.0, 2.0], Method::Uniformization, 1e-12).unwrap();
        let direct = evolve(&rho, &g, 2.0, Method::Uniformization, 1e-12).unwrap();
        assert_eq!(grid[0], rho);
        assert!(grid[3].l1_distance(&direct) < 1e-11);
        let rk = evolve(&rho, &g, 2.0, Method::RkAdaptive, 1e-12).unwrap();
        assert!(rk.l1_distance(&direct) < 1e-10);
    }

    #[test]
    fn product_layout() {
        let rho = DensityVector::new(vec![0.25, 0.75]).unwrap();
        let p = rho.product(&[0.5, 0.5]);
        assert_eq!(p.values(), &[0.125, 0.375, 0.125, 0.375]);
    }
}
