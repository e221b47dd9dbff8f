//! Finite site lattices and the truncated configuration spaces over them.

use crate::config_space::{Configuration, Domain, Point};
use crate::error::{invalid, Error, Result};

/// Largest number of lattice sites (states are stored as `u32` bitmasks).
pub const MAX_SITES: usize = 24;
/// Largest truncated space that will be enumerated.
pub const MAX_STATES: usize = 10_000_000;

/// Uniform grid of `per_dim^d` sites on the torus.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteLattice {
    domain: Domain,
    sites: Vec<Point>,
}

impl SiteLattice {
    /// Grid with `per_dim` sites per axis at coordinates `i·L/per_dim`.
    pub fn uniform(domain: Domain, per_dim: usize) -> Result<Self> {
        if per_dim == 0 {
            return Err(invalid("per_dim", "must be at least 1"));
        }
        let m = per_dim.checked_pow(domain.dim as u32).unwrap_or(usize::MAX);
        if m > MAX_SITES {
            return Err(invalid("M", format!("{m} sites exceeds the cap of {MAX_SITES}")));
        }
        let h = domain.side / per_dim as f64;
        let sites = (0..m)
            .map(|mut k| {
                let mut c = Vec::with_capacity(domain.dim);
                for _ in 0..domain.dim {
                    c.push((k % per_dim) as f64 * h);
                    k /= per_dim;
                }
                Point(c)
            })
            .collect();
        Ok(Self { domain, sites })
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn sites(&self) -> &[Point] {
        &self.sites
    }

    pub fn site(&self, i: usize) -> &Point {
        &self.sites[i]
    }

    /// `h^d = volume / M`.
    pub fn cell_volume(&self) -> f64 {
        self.domain.volume() / self.sites.len() as f64
    }

    /// Index of the site at exactly this position.
    pub fn index_of(&self, p: &Point) -> Option<usize> {
        self.sites.iter().position(|s| s == p)
    }

    /// Configuration of the sites whose bits are set in `mask`.
    pub fn configuration(&self, mask: u32) -> Configuration {
        Configuration::from_points(
            (0..self.sites.len())
                .filter(|&i| mask >> i & 1 == 1)
                .map(|i| self.sites[i].clone())
                .collect(),
        )
    }

    /// Bitmask of a configuration made of lattice sites.
    pub fn mask_of(&self, c: &Configuration) -> Result<u32> {
        let mut mask = 0u32;
        for p in c {
            let i = self.index_of(p).ok_or_else(|| Error::NotMember(p.to_string()))?;
            mask |= 1 << i;
        }
        Ok(mask)
    }
}

fn binomial_table(m: usize) -> Vec<Vec<usize>> {
    let mut c = vec![vec![0usize; m + 1]; m + 1];
    for n in 0..=m {
        c[n][0] = 1;
        for k in 1..=n {
            c[n][k] = c[n - 1][k - 1] + if k < n { c[n - 1][k] } else { 0 };
        }
    }
    c
}

/// All subsets of `M` sites with at most `N` elements, ordered by size and
/// then by bitmask value.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedSpace {
    m: usize,
    n: usize,
    states: Vec<u32>,
    /// `offsets[k]` = index of the first state of size `k`.
    offsets: Vec<usize>,
    binom: Vec<Vec<usize>>,
}

impl TruncatedSpace {
    pub fn sites(&self) -> usize {
        self.m
    }

    pub fn cap(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn mask(&self, index: usize) -> u32 {
        self.states[index]
    }

    pub fn masks(&self) -> &[u32] {
        &self.states
    }

    pub fn size_of(&self, index: usize) -> usize {
        self.states[index].count_ones() as usize
    }

    /// Index of a bitmask, via the combinatorial number system.
    pub fn index(&self, mask: u32) -> Option<usize> {
        if mask >> self.m != 0 {
            return None;
        }
        let k = mask.count_ones() as usize;
        if k > self.n {
            return None;
        }
        let mut rank = 0;
        let mut seen = 0;
        for bit in 0..self.m {
            if mask >> bit & 1 == 1 {
                seen += 1;
                rank += self.binom[bit][seen];
            }
        }
        Some(self.offsets[k] + rank)
    }

    /// Vector of `|η|` over the space.
    pub fn sizes(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.count_ones() as f64).collect()
    }
}

/// Enumerates the truncated space of at most `n` occupied sites out of `m`.
pub fn enumerate_space(m: usize, n: usize) -> Result<TruncatedSpace> {
    if m > MAX_SITES {
        return Err(invalid("M", format!("must be at most {MAX_SITES}, got {m}")));
    }
    if n > m {
        return Err(invalid("N", format!("must not exceed M = {m}, got {n}")));
    }
    let binom = binomial_table(m);
    let size: usize = (0..=n).map(|k| binom[m][k]).sum();
    if size > MAX_STATES {
        return Err(Error::TruncationTooLarge { size, cap: MAX_STATES });
    }
    let mut states = Vec::with_capacity(size);
    let mut offsets = Vec::with_capacity(n + 2);
    for k in 0..=n {
        offsets.push(states.len());
        if k == 0 {
            states.push(0);
            continue;
        }
        // Gosper's hack walks same-popcount masks in increasing order
        let mut s: u64 = (1u64 << k) - 1;
        let limit = 1u64 << m;
        while s < limit {
            states.push(s as u32);
            let c = s & s.wrapping_neg();
            let r = s + c;
            s = (((r ^ s) >> 2) / c) | r;
        }
    }
    offsets.push(states.len());
    Ok(TruncatedSpace {
        m,
        n,
        states,
        offsets,
        binom,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sizes() {
        assert_eq!(enumerate_space(3, 2).unwrap().len(), 7);
        assert_eq!(enumerate_space(3, 3).unwrap().len(), 8);
        assert_eq!(enumerate_space(5, 0).unwrap().len(), 1);
        assert_eq!(enumerate_space(0, 0).unwrap().len(), 1);
        assert_eq!(enumerate_space(12, 7).unwrap().len(), 3302);
    }

    #[test]
    fn order_by_size_then_mask() {
        let s = enumerate_space(3, 2).unwrap();
        assert_eq!(s.masks(), &[0, 1, 2, 4, 3, 5, 6]);
    }

    #[test]
    fn errors() {
        assert!(enumerate_space(3, 4).is_err());
        assert!(enumerate_space(25, 1).is_err());
        // C(24,12) alone is 2.7e6; the full cube is 1.6e7
        assert!(matches!(enumerate_space(24, 24), Err(Error::TruncationTooLarge { .. })));
    }

    #[test]
    fn lattice_geometry() {
        let l = SiteLattice::uniform(Domain::unit(1), 3).unwrap();
        assert_eq!(l.len(), 3);
        assert!((l.cell_volume() - 1.0 / 3.0).abs() < 1e-15);
        assert!((l.site(1).0[0] - 1.0 / 3.0).abs() < 1e-15);
        let l2 = SiteLattice::uniform(Domain::new(2, 2.0).unwrap(), 4).unwrap();
        assert_eq!(l2.len(), 16);
        assert_eq!(l2.site(5).0, vec![0.5, 0.5]);
        let c = l2.configuration(0b100010);
        assert_eq!(l2.mask_of(&c).unwrap(), 0b100010);
        assert!(SiteLattice::uniform(Domain::unit(2), 5).is_err());
    }

    proptest! {
        #[test]
        fn index_round_trips(m in 0usize..14, n_frac in 0.0f64..=1.0) {
            let n = (m as f64 * n_frac).round() as usize;
            let sp = enumerate_space(m, n).unwrap();
            for (i, &mask) in sp.masks().iter().enumerate() {
                prop_assert_eq!(sp.index(mask), Some(i));
            }
            if n < m {
                let over = (1u32 << (n + 1)) - 1;
                prop_assert_eq!(sp.index(over), None);
            }
        }
    }
}
