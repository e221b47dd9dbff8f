//! Finite-state ergodic environments with a known invariant law.

use serde::Serialize;

use crate::config_space::{Configuration, Point};
use crate::error::{Error, Result};

/// Continuous-time chain over `K` environment configurations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvChain {
    states: Vec<Configuration>,
    /// Dense `K × K` rate matrix, rows summing to zero.
    rates: Vec<Vec<f64>>,
    mu: Vec<f64>,
}

impl EnvChain {
    /// Validates the rate matrix, checks irreducibility and solves `μQ = 0`.
    pub fn new(states: Vec<Configuration>, rates: Vec<Vec<f64>>) -> Result<Self> {
        let k = states.len();
        if k == 0 {
            return Err(Error::InvalidEnvChain("no states".into()));
        }
        if rates.len() != k || rates.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidEnvChain(format!("rate matrix must be {k}×{k}")));
        }
        let mut rates = rates;
        for (i, row) in rates.iter_mut().enumerate() {
            let mut off = 0.0;
            for (j, &r) in row.iter().enumerate() {
                if i != j {
                    if !(r >= 0.0 && r.is_finite()) {
                        return Err(Error::InvalidEnvChain(format!("rate {r} at ({i},{j})")));
                    }
                    off += r;
                }
            }
            if (row[i] + off).abs() > 1e-12 * (1.0 + off) {
                return Err(Error::InvalidEnvChain(format!("row {i} does not sum to zero")));
            }
            row[i] = -off;
        }
        if !strongly_connected(&rates) {
            return Err(Error::InvalidEnvChain("chain is not irreducible".into()));
        }
        let mu = stationary(&rates)?;
        Ok(Self { states, rates, mu })
    }

    /// One-site free Glauber chain: `∅ → {w}` at rate `z`, `{w} → ∅` at rate 1.
    /// Invariant law `(1/(1+z), z/(1+z))`.
    pub fn one_site_glauber(site: Point, z: f64) -> Result<Self> {
        if !(z > 0.0 && z.is_finite()) {
            return Err(Error::InvalidEnvChain(format!("intensity must be positive, got {z}")));
        }
        Self::new(
            vec![Configuration::empty(), Configuration::from_points(vec![site])],
            vec![vec![-z, z], vec![1.0, -1.0]],
        )
    }

    /// Chain that redraws the state from `mu` at unit rate.
    pub fn resample(states: Vec<Configuration>, mu: Vec<f64>) -> Result<Self> {
        if mu.len() != states.len() {
            return Err(Error::InvalidEnvChain("mu length mismatch".into()));
        }
        let total: f64 = mu.iter().sum();
        if mu.iter().any(|&m| !(m > 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidEnvChain("mu must be a positive probability vector".into()));
        }
        let k = mu.len();
        let rates = (0..k)
            .map(|i| (0..k).map(|j| if i == j { mu[i] - 1.0 } else { mu[j] }).collect())
            .collect();
        Self::new(states, rates)
    }

    /// One-site resample chain with the same invariant law as [`Self::one_site_glauber`].
    pub fn one_site_resample(site: Point, z: f64) -> Result<Self> {
        if !(z > 0.0 && z.is_finite()) {
            return Err(Error::InvalidEnvChain(format!("intensity must be positive, got {z}")));
        }
        Self::resample(
            vec![Configuration::empty(), Configuration::from_points(vec![site])],
            vec![1.0 / (1.0 + z), z / (1.0 + z)],
        )
    }

    /// Single frozen state: no dynamics, trivially averaged.
    pub fn trivial(state: Configuration) -> Self {
        Self {
            states: vec![state],
            rates: vec![vec![0.0]],
            mu: vec![1.0],
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[Configuration] {
        &self.states
    }

    pub fn state(&self, k: usize) -> &Configuration {
        &self.states[k]
    }

    pub fn rate(&self, from: usize, to: usize) -> f64 {
        self.rates[from][to]
    }

    /// Total rate of leaving state `k`.
    pub fn exit_rate(&self, k: usize) -> f64 {
        -self.rates[k][k]
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }
}

fn strongly_connected(q: &[Vec<f64>]) -> bool {
    let k = q.len();
    let reach = |forward: bool| {
        let mut seen = vec![false; k];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..k {
                let r = if forward { q[i][j] } else { q[j][i] };
                if i != j && r > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

/// Solves `μQ = 0, Σμ = 1` by Gaussian elimination with partial pivoting.
fn stationary(q: &[Vec<f64>]) -> Result<Vec<f64>> {
    let k = q.len();
    // rows of the system Qᵀ μ = 0 with the last equation replaced by Σμ = 1
    let mut a: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            let mut row: Vec<f64> = (0..k).map(|j| q[j][i]).collect();
            row.push(0.0);
            row
        })
        .collect();
    a[k - 1] = vec![1.0; k + 1];
    for col in 0..k {
        let piv = (col..k)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        if a[piv][col].abs() < 1e-300 {
            return Err(Error::InvalidEnvChain("singular stationary system".into()));
        }
        a.swap(col, piv);
        for r in 0..k {
            if r != col {
                let f = a[r][col] / a[col][col];
                if f != 0.0 {
                    for c in col..=k {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
    }
    let mu: Vec<f64> = (0..k).map(|i| a[i][k] / a[i][i]).collect();
    if mu.iter().any(|&m| !(m > 0.0)) {
        return Err(Error::InvalidEnvChain("invariant law is not positive".into()));
    }
    Ok(mu)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glauber_invariant_law() {
        let c = EnvChain::one_site_glauber(Point(vec![0.0]), 3.0).unwrap();
        assert!((c.mu()[0] - 0.25).abs() < 1e-15);
        assert!((c.mu()[1] - 0.75).abs() < 1e-15);
        assert_eq!(c.exit_rate(0), 3.0);
    }

    #[test]
    fn resample_invariant_law() {
        let states = (0..3).map(|i| Configuration::from_points(vec![Point(vec![i as f64 * 0.1])])).collect();
        let c = EnvChain::resample(states, vec![0.2, 0.5, 0.3]).unwrap();
        for (m, e) in c.mu().iter().zip([0.2, 0.5, 0.3]) {
            assert!((m - e).abs() < 1e-14);
        }
        // μQ = 0 holds exactly for the resample construction
        for j in 0..3 {
            let s: f64 = (0..3).map(|i| c.mu()[i] * c.rate(i, j)).sum();
            assert!(s.abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_reducible_and_malformed() {
        let two = vec![Configuration::empty(), Configuration::from_points(vec![Point(vec![0.5])])];
        assert!(EnvChain::new(two.clone(), vec![vec![-1.0, 1.0], vec![0.0, 0.0]]).is_err());
        assert!(EnvChain::new(two.clone(), vec![vec![-1.0, 2.0], vec![1.0, -1.0]]).is_err());
        assert!(EnvChain::new(two.clone(), vec![vec![1.0, -1.0], vec![1.0, -1.0]]).is_err());
        assert!(EnvChain::new(two, vec![vec![0.0]]).is_err());
        assert!(EnvChain::one_site_glauber(Point(vec![0.0]), 0.0).is_err());
    }

    #[test]
    fn four_state_cycle() {
        let states: Vec<Configuration> = (0..4).map(|_| Configuration::empty()).collect();
        let mut q = vec![vec![0.0; 4]; 4];
        let r = [1.0, 2.0, 4.0, 8.0];
        for i in 0..4 {
            q[i][(i + 1) % 4] = r[i];
            q[i][i] = -r[i];
        }
        let c = EnvChain::new(states, q).unwrap();
        // flux balance on a cycle: μ_i r_i constant
        let flux: Vec<f64> = (0..4).map(|i| c.mu()[i] * r[i]).collect();
        for f in &flux {
            assert!((f - flux[0]).abs() < 1e-14);
        }
    }
}
