//! Sparse rate matrices.
//!
//! A [`Generator`] stores off-diagonal rates in CSR form plus a separate
//! diagonal. In [`Orientation::Backward`] form row `i` lists the jumps out of
//! state `i` (the Kolmogorov matrix acting on functions); in
//! [`Orientation::Forward`] form row `i` lists the jumps into `i` (the
//! adjoint acting on densities). With counting measure on a finite space the
//! two are transposes of each other.

use std::io::Write;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    Backward,
    Forward,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    n: usize,
    orientation: Orientation,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    /// `-(total outflow)` per state, including mass sent to a cemetery.
    diag: Vec<f64>,
}

impl Generator {
    /// Builds a backward generator from `(from, to, rate)` jumps and extra
    /// per-state losses to a cemetery. Duplicate jumps are summed, self
    /// loops and zero rates are dropped.
    pub fn from_transitions(n: usize, jumps: &[(usize, usize, f64)], losses: &[(usize, f64)]) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, f64)> = Vec::with_capacity(jumps.len());
        for &(i, j, r) in jumps {
            if i >= n || j >= n {
                return Err(Error::InvalidGenerator(format!("index ({i},{j}) out of range {n}")));
            }
            if !(r >= 0.0 && r.is_finite()) {
                return Err(Error::InvalidGenerator(format!("rate {r} at ({i},{j})")));
            }
            if i != j && r > 0.0 {
                sorted.push((i, j, r));
            }
        }
        sorted.sort_by_key(|a| (a.0, a.1));
        let mut g = Self::from_sorted(n, Orientation::Backward, sorted.into_iter());
        for &(i, r) in losses {
            if i >= n || !(r >= 0.0 && r.is_finite()) {
                return Err(Error::InvalidGenerator(format!("loss {r} at state {i}")));
            }
            g.diag[i] -= r;
        }
        Ok(g)
    }

    /// Builds from entries sorted by `(row, col)`; duplicates are merged and
    /// the diagonal balances each source's outflow.
    fn from_sorted(n: usize, orientation: Orientation, entries: impl Iterator<Item = (usize, usize, f64)>) -> Self {
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::new();
        let mut vals: Vec<f64> = Vec::new();
        let mut last: Option<(usize, usize)> = None;
        for (i, j, r) in entries {
            if last == Some((i, j)) {
                *vals.last_mut().unwrap() += r;
                continue;
            }
            last = Some((i, j));
            row_ptr[i + 1] += 1;
            cols.push(j);
            vals.push(r);
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        let mut g = Self {
            n,
            orientation,
            row_ptr,
            cols,
            vals,
            diag: vec![0.0; n],
        };
        g.rebalance();
        g
    }

    fn rebalance(&mut self) {
        self.diag.iter_mut().for_each(|d| *d = 0.0);
        match self.orientation {
            Orientation::Backward => {
                for i in 0..self.n {
                    self.diag[i] = -self.vals[self.row_ptr[i]..self.row_ptr[i + 1]].iter().sum::<f64>();
                }
            }
            Orientation::Forward => {
                for k in 0..self.vals.len() {
                    self.diag[self.cols[k]] -= self.vals[k];
                }
            }
        }
    }

    /// The zero generator on `n` states.
    pub fn zero(n: usize) -> Self {
        Self::from_sorted(n, Orientation::Backward, std::iter::empty())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    /// Off-diagonal entries of matrix row `i` as `(col, value)`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    /// All jumps as `(from, to, rate)` regardless of orientation.
    pub fn jumps(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| {
            self.row(i).map(move |(j, r)| match self.orientation {
                Orientation::Backward => (i, j, r),
                Orientation::Forward => (j, i, r),
            })
        })
    }

    /// Total outflow rate of state `i` (including cemetery losses).
    pub fn outflow(&self, i: usize) -> f64 {
        -self.diag[i]
    }

    /// Rate of the jump `from → to` (zero when absent).
    pub fn rate(&self, from: usize, to: usize) -> f64 {
        let (r, c) = match self.orientation {
            Orientation::Backward => (from, to),
            Orientation::Forward => (to, from),
        };
        self.row(r).find(|&(j, _)| j == c).map_or(0.0, |(_, v)| v)
    }

    /// Mass leaving state `i` to the cemetery.
    pub fn loss(&self, i: usize) -> f64 {
        let inside: f64 = match self.orientation {
            Orientation::Backward => self.row(i).map(|(_, r)| r).sum(),
            Orientation::Forward => self.jumps().filter(|&(f, _, _)| f == i).map(|(_, _, r)| r).sum(),
        };
        (self.outflow(i) - inside).max(0.0)
    }

    /// Transpose: backward ↔ forward.
    pub fn adjoint(&self) -> Self {
        let n = self.n;
        let mut counts = vec![0usize; n + 1];
        for &j in &self.cols {
            counts[j + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut cols = vec![0usize; self.cols.len()];
        let mut vals = vec![0.0; self.vals.len()];
        for i in 0..n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.cols[k];
                let dst = next[j];
                next[j] += 1;
                cols[dst] = i;
                vals[dst] = self.vals[k];
            }
        }
        Self {
            n,
            orientation: match self.orientation {
                Orientation::Backward => Orientation::Forward,
                Orientation::Forward => Orientation::Backward,
            },
            row_ptr,
            cols,
            vals,
            diag: self.diag.clone(),
        }
    }

    /// Returns the generator in the requested orientation.
    pub fn oriented(&self, o: Orientation) -> Self {
        if self.orientation == o {
            self.clone()
        } else {
            self.adjoint()
        }
    }

    /// `y = A x` for the matrix as stored.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        for i in 0..self.n {
            let mut acc = self.diag[i] * x[i];
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            y[i] = acc;
        }
    }

    /// Multiplies every rate by `f ≥ 0`.
    pub fn scaled(&self, f: f64) -> Self {
        let mut g = self.clone();
        g.vals.iter_mut().for_each(|v| *v *= f);
        g.diag.iter_mut().for_each(|v| *v *= f);
        g
    }

    /// Entry-wise sum of two generators of equal shape and orientation.
    pub fn sum(&self, other: &Self) -> Result<Self> {
        if self.n != other.n || self.orientation != other.orientation {
            return Err(Error::InvalidGenerator("shape or orientation mismatch in sum".into()));
        }
        let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(self.nnz() + other.nnz());
        for g in [self, other] {
            for i in 0..g.n {
                entries.extend(g.row(i).map(|(j, r)| (i, j, r)));
            }
        }
        entries.sort_by_key(|a| (a.0, a.1));
        let mut out = Self::from_sorted(self.n, self.orientation, entries.into_iter());
        for i in 0..self.n {
            out.diag[i] = self.diag[i] + other.diag[i];
        }
        Ok(out)
    }

    /// Largest departure from conservativity, `max_i |outflow(i) − Σ jumps out of i|`.
    pub fn conservation_defect(&self) -> f64 {
        let mut out = vec![0.0; self.n];
        for (i, _, r) in self.jumps() {
            out[i] += r;
        }
        (0..self.n)
            .map(|i| (self.outflow(i) - out[i]).abs())
            .fold(0.0, f64::max)
    }

    /// Sums of each source's column in forward form (zero when conservative).
    pub fn forward_column_sums(&self) -> Vec<f64> {
        let mut s = self.diag.clone();
        for (i, _, r) in self.jumps() {
            s[i] += r;
        }
        s
    }

    /// Induced L¹ norm of the forward matrix: `max_j (|G_jj| + Σ_{i≠j} G_ij)`.
    pub fn forward_l1_norm(&self) -> f64 {
        let mut s: Vec<f64> = self.diag.iter().map(|d| d.abs()).collect();
        for (i, _, r) in self.jumps() {
            s[i] += r;
        }
        s.into_iter().fold(0.0, f64::max)
    }

    /// Largest outflow rate.
    pub fn max_outflow(&self) -> f64 {
        self.diag.iter().fold(0.0, |m, d| m.max(-d))
    }

    /// Validates signs: off-diagonals ≥ 0 and outflow ≥ jumps out.
    pub fn audit(&self, tol: f64) -> Result<()> {
        if self.vals.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::InvalidGenerator("negative off-diagonal rate".into()));
        }
        for (i, s) in self.forward_column_sums().into_iter().enumerate() {
            if s > tol * (1.0 + self.outflow(i)) {
                return Err(Error::InvalidGenerator(format!("state {i} has positive column sum {s:e}")));
            }
        }
        Ok(())
    }

    /// Dense copy of the matrix as stored (row-major).
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.n]; self.n];
        for i in 0..self.n {
            m[i][i] = self.diag[i];
            for (j, r) in self.row(i) {
                m[i][j] += r;
            }
        }
        m
    }

    /// Writes the matrix as stored in `row,col,rate` CSV, diagonal included.
    pub fn write_triplets<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "row,col,rate")?;
        for i in 0..self.n {
            let mut entries: Vec<(usize, f64)> = self.row(i).collect();
            entries.push((i, self.diag[i]));
            entries.sort_by_key(|e| e.0);
            for (j, r) in entries {
                writeln!(w, "{i},{j},{r:e}")?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Generator {
        Generator::from_transitions(3, &[(0, 1, 2.0), (1, 2, 0.5), (2, 0, 1.0), (0, 1, 1.0), (1, 0, 0.25)], &[(2, 0.3)])
            .unwrap()
    }

    #[test]
    fn duplicates_merge_and_diagonal_balances() {
        let g = sample();
        assert_eq!(g.rate(0, 1), 3.0);
        assert_eq!(g.diagonal(), &[-3.0, -0.75, -1.3]);
        assert!((g.loss(2) - 0.3).abs() < 1e-15);
        assert_eq!(g.loss(0), 0.0);
    }

    #[test]
    fn adjoint_is_transpose() {
        let g = sample();
        let a = g.adjoint();
        assert_eq!(a.orientation(), Orientation::Forward);
        let d = g.to_dense();
        let t = a.to_dense();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(d[i][j], t[j][i]);
            }
        }
        assert_eq!(a.adjoint(), g);
        assert_eq!(a.rate(0, 1), 3.0);
        let mut j1: Vec<_> = g.jumps().collect();
        let mut j2: Vec<_> = a.jumps().collect();
        j1.sort_by(|x, y| x.partial_cmp(y).unwrap());
        j2.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(j1, j2);
    }

    #[test]
    fn norms_and_sums() {
        let g = sample();
        let cs = g.forward_column_sums();
        assert!(cs[0].abs() < 1e-15 && cs[1].abs() < 1e-15);
        assert!((cs[2] + 0.3).abs() < 1e-15);
        assert!((g.forward_l1_norm() - 6.0).abs() < 1e-15);
        assert!((g.conservation_defect() - 0.3).abs() < 1e-15);
        g.audit(1e-12).unwrap();
    }

    #[test]
    fn rejects_bad_rates() {
        assert!(Generator::from_transitions(2, &[(0, 1, -1.0)], &[]).is_err());
        assert!(Generator::from_transitions(2, &[(0, 2, 1.0)], &[]).is_err());
        assert!(Generator::from_transitions(2, &[(0, 1, f64::NAN)], &[]).is_err());
    }

    #[test]
    fn sum_and_scale() {
        let g = sample();
        let s = g.sum(&g.scaled(2.0)).unwrap();
        assert!((s.rate(0, 1) - 9.0).abs() < 1e-15);
        assert!((s.diagonal()[2] + 3.9).abs() < 1e-15);
        assert!(g.sum(&g.adjoint()).is_err());
    }

    #[test]
    fn triplet_csv() {
        let g = Generator::from_transitions(2, &[(1, 0, 1.5)], &[]).unwrap();
        let mut buf = Vec::new();
        g.write_triplets(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "row,col,rate\n0,0,0e0\n1,0,1.5e0\n1,1,-1.5e0\n");
    }
}
