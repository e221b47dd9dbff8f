//! Finite configurations on a periodic box.
//!
//! The box `[0, L)^d` stands in for `R^d` so every window is bounded. Points
//! are compared through the minimum-image metric, and integrals against the
//! Lebesgue–Poisson measure are estimated by reweighted unit-intensity
//! Poisson sampling on the box: `∫ G dλ = e^{|Λ|} E_{π₁}[G]`.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Largest configuration for which subset sums are enumerated.
pub const SUBSET_CAP: usize = 25;

/// The torus `[0, side)^dim`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub dim: usize,
    pub side: f64,
}

impl Domain {
    pub fn new(dim: usize, side: f64) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dim", "must be at least 1"));
        }
        if !(side > 0.0 && side.is_finite()) {
            return Err(invalid("side", format!("must be positive and finite, got {side}")));
        }
        Ok(Self { dim, side })
    }

    /// Unit torus in `dim` dimensions.
    pub fn unit(dim: usize) -> Self {
        Self { dim, side: 1.0 }
    }

    pub fn volume(&self) -> f64 {
        self.side.powi(self.dim as i32)
    }

    /// Largest possible minimum-image distance, `L·√d/2`.
    pub fn max_distance(&self) -> f64 {
        0.5 * self.side * (self.dim as f64).sqrt()
    }

    /// Minimum-image distance without dimension checks.
    #[inline]
    pub fn dist(&self, x: &[f64], y: &[f64]) -> f64 {
        let l = self.side;
        let mut s = 0.0;
        for (a, b) in x.iter().zip(y) {
            let mut d = (a - b).abs() % l;
            if d > 0.5 * l {
                d = l - d;
            }
            s += d * d;
        }
        s.sqrt()
    }

    /// Wraps a coordinate into `[0, L)`.
    #[inline]
    pub fn wrap(&self, c: f64) -> f64 {
        let w = c.rem_euclid(self.side);
        // rem_euclid can round up to exactly `side`
        if w >= self.side {
            0.0
        } else {
            w
        }
    }

    pub fn contains(&self, p: &Point) -> bool {
        p.dim() == self.dim && p.0.iter().all(|&c| (0.0..self.side).contains(&c))
    }

    pub fn uniform_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        Point(
            (0..self.dim)
                .map(|_| self.wrap(rng.random::<f64>() * self.side))
                .collect(),
        )
    }
}

/// A position on the torus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Point(pub Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Self {
        Point(coords)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }
}

impl From<f64> for Point {
    fn from(x: f64) -> Self {
        Point(vec![x])
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// Minimum-image Euclidean distance between two points of `dom`.
pub fn torus_distance(dom: &Domain, x: &Point, y: &Point) -> Result<f64> {
    for p in [x, y] {
        if p.dim() != dom.dim {
            return Err(Error::DimensionMismatch {
                expected: dom.dim,
                got: p.dim(),
            });
        }
    }
    Ok(dom.dist(&x.0, &y.0))
}

/// A finite simple point set. Iteration follows insertion order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Configuration {
    points: Vec<Point>,
}

impl Configuration {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a configuration, rejecting pairs closer than `tolerance`
    /// (with tolerance 0 only exact duplicates are rejected).
    pub fn new(points: Vec<Point>, dom: &Domain, tolerance: f64) -> Result<Self> {
        for p in &points {
            if p.dim() != dom.dim {
                return Err(Error::DimensionMismatch {
                    expected: dom.dim,
                    got: p.dim(),
                });
            }
        }
        for i in 0..points.len() {
            for j in 0..i {
                let d = dom.dist(&points[i].0, &points[j].0);
                if d < tolerance || (tolerance == 0.0 && points[i] == points[j]) {
                    return Err(invalid(
                        "points",
                        format!("{} and {} violate simplicity", points[i], points[j]),
                    ));
                }
            }
        }
        Ok(Self { points })
    }

    /// Wraps points without the simplicity check; callers guarantee distinctness.
    pub fn from_points(points: Vec<Point>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point> {
        self.points.iter()
    }

    pub fn contains(&self, p: &Point) -> bool {
        self.points.iter().any(|q| q == p)
    }

    pub fn position(&self, p: &Point) -> Option<usize> {
        self.points.iter().position(|q| q == p)
    }

    pub fn push(&mut self, p: Point) {
        self.points.push(p);
    }

    pub fn swap_remove(&mut self, i: usize) -> Point {
        self.points.swap_remove(i)
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }

    /// Splits into `(ξ, η \ ξ)` according to the bits of `mask`.
    pub fn split(&self, mask: u64) -> (Configuration, Configuration) {
        let mut inside = Vec::new();
        let mut outside = Vec::new();
        for (i, p) in self.points.iter().enumerate() {
            if mask >> i & 1 == 1 {
                inside.push(p.clone());
            } else {
                outside.push(p.clone());
            }
        }
        (Self::from_points(inside), Self::from_points(outside))
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, p) in self.points.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{p}")?;
        }
        write!(f, "}}")
    }
}

impl<'a> IntoIterator for &'a Configuration {
    type Item = &'a Point;
    type IntoIter = std::slice::Iter<'a, Point>;
    fn into_iter(self) -> Self::IntoIter {
        self.points.iter()
    }
}

/// Samples a Poisson count with the given mean (zero mean gives zero).
pub(crate) fn poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    let d = Poisson::new(mean).expect("positive finite mean");
    d.sample(rng) as usize
}

/// Draws from the Poisson point process of intensity `z` on `dom`.
pub fn sample_poisson<R: Rng + ?Sized>(dom: &Domain, z: f64, rng: &mut R) -> Result<Configuration> {
    if !(z >= 0.0 && z.is_finite()) {
        return Err(invalid("z", format!("intensity must be nonnegative, got {z}")));
    }
    let n = poisson_count(z * dom.volume(), rng);
    Ok(Configuration::from_points(
        (0..n).map(|_| dom.uniform_point(rng)).collect(),
    ))
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub estimate: f64,
    pub std_error: f64,
}

fn mean_and_se(sum: f64, sum_sq: f64, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let mean = sum / nf;
    if n < 2 {
        return (mean, f64::INFINITY);
    }
    let var = ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0);
    (mean, (var / nf).sqrt())
}

/// Estimates `∫_{Γ_Λ} G dλ` over configurations in `dom`.
pub fn lp_expectation<G, R>(mut g: G, dom: &Domain, n_samples: usize, rng: &mut R) -> Result<Estimate>
where
    G: FnMut(&Configuration) -> f64,
    R: Rng + ?Sized,
{
    if n_samples == 0 {
        return Err(invalid("n_samples", "must be at least 1"));
    }
    let weight = dom.volume().exp();
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n_samples {
        let eta = sample_poisson(dom, 1.0, rng)?;
        let v = g(&eta);
        if !v.is_finite() {
            return Err(Error::NonFinite {
                value: v,
                configuration: eta.to_string(),
            });
        }
        s += v;
        s2 += v * v;
    }
    let (m, se) = mean_and_se(s, s2, n_samples);
    Ok(Estimate {
        estimate: weight * m,
        std_error: weight * se,
    })
}

/// Outcome of a Monte Carlo check of the integration-by-parts identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IbpReport {
    pub lhs: f64,
    pub rhs: f64,
    pub lhs_std_error: f64,
    pub rhs_std_error: f64,
    pub combined_error: f64,
    pub pass: bool,
}

/// Compares `∫ Σ_{ξ⊂η} G(ξ, η∖ξ) dλ(η)` against `∫∫ G(ξ, η) dλ(ξ) dλ(η)`
/// using independent samples for the two sides. Passes when the sides agree
/// within three combined standard errors.
pub fn verify_ibp<G, R>(mut g: G, dom: &Domain, n_samples: usize, rng: &mut R) -> Result<IbpReport>
where
    G: FnMut(&Configuration, &Configuration) -> f64,
    R: Rng + ?Sized,
{
    let lhs = lp_expectation_fallible(
        |eta| {
            if eta.len() > SUBSET_CAP {
                return Err(Error::SubsetBlowUp {
                    size: eta.len(),
                    cap: SUBSET_CAP,
                });
            }
            let mut acc = 0.0;
            for mask in 0..(1u64 << eta.len()) {
                let (xi, rest) = eta.split(mask);
                acc += g(&xi, &rest);
            }
            Ok(acc)
        },
        dom,
        n_samples,
        rng,
    )?;

    let weight = dom.volume().exp();
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n_samples {
        let xi = sample_poisson(dom, 1.0, rng)?;
        let eta = sample_poisson(dom, 1.0, rng)?;
        let v = g(&xi, &eta);
        if !v.is_finite() {
            return Err(Error::NonFinite {
                value: v,
                configuration: format!("{xi} × {eta}"),
            });
        }
        s += v;
        s2 += v * v;
    }
    let (m, se) = mean_and_se(s, s2, n_samples);
    let rhs = Estimate {
        estimate: weight * weight * m,
        std_error: weight * weight * se,
    };

    let combined = (lhs.std_error.powi(2) + rhs.std_error.powi(2)).sqrt();
    let diff = (lhs.estimate - rhs.estimate).abs();
    Ok(IbpReport {
        lhs: lhs.estimate,
        rhs: rhs.estimate,
        lhs_std_error: lhs.std_error,
        rhs_std_error: rhs.std_error,
        combined_error: combined,
        // exact agreement covers the zero-variance cases
        pass: diff == 0.0 || diff <= 3.0 * combined,
    })
}

fn lp_expectation_fallible<G, R>(mut g: G, dom: &Domain, n_samples: usize, rng: &mut R) -> Result<Estimate>
where
    G: FnMut(&Configuration) -> Result<f64>,
    R: Rng + ?Sized,
{
    if n_samples == 0 {
        return Err(invalid("n_samples", "must be at least 1"));
    }
    let weight = dom.volume().exp();
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n_samples {
        let eta = sample_poisson(dom, 1.0, rng)?;
        let v = g(&eta)?;
        if !v.is_finite() {
            return Err(Error::NonFinite {
                value: v,
                configuration: eta.to_string(),
            });
        }
        s += v;
        s2 += v * v;
    }
    let (m, se) = mean_and_se(s, s2, n_samples);
    Ok(Estimate {
        estimate: weight * m,
        std_error: weight * se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pt(c: &[f64]) -> Point {
        Point(c.to_vec())
    }

    #[test]
    fn distance_examples() {
        let d1 = Domain::unit(1);
        assert!((torus_distance(&d1, &pt(&[0.1]), &pt(&[0.9])).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(torus_distance(&d1, &pt(&[0.3]), &pt(&[0.3])).unwrap(), 0.0);
        let d2 = Domain::new(2, 2.0).unwrap();
        let r = torus_distance(&d2, &pt(&[0.0, 0.0]), &pt(&[1.0, 1.0])).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn distance_dimension_mismatch() {
        let d = Domain::unit(2);
        assert!(matches!(
            torus_distance(&d, &pt(&[0.0]), &pt(&[0.0, 0.0])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn domain_validation() {
        assert!(Domain::new(0, 1.0).is_err());
        assert!(Domain::new(1, 0.0).is_err());
        assert_eq!(Domain::new(3, 2.0).unwrap().volume(), 8.0);
    }

    #[test]
    fn wrap_stays_in_range() {
        let d = Domain::unit(1);
        assert_eq!(d.wrap(1.0), 0.0);
        assert!((d.wrap(-0.25) - 0.75).abs() < 1e-15);
        assert!(d.wrap(-1e-18) < 1.0);
    }

    #[test]
    fn duplicate_points_rejected() {
        let d = Domain::unit(1);
        assert!(Configuration::new(vec![pt(&[0.2]), pt(&[0.2])], &d, 0.0).is_err());
        assert!(Configuration::new(vec![pt(&[0.2]), pt(&[0.25])], &d, 0.1).is_err());
        assert!(Configuration::new(vec![pt(&[0.2]), pt(&[0.25])], &d, 0.0).is_ok());
    }

    #[test]
    fn zero_intensity_is_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert!(sample_poisson(&Domain::unit(2), 0.0, &mut rng).unwrap().is_empty());
        }
        assert!(sample_poisson(&Domain::unit(1), -1.0, &mut rng).is_err());
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let d = Domain::unit(2);
        let a = sample_poisson(&d, 5.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_poisson(&d, 5.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|p| d.contains(p)));
    }

    #[test]
    fn json_shape() {
        let c = Configuration::from_points(vec![pt(&[0.1, 0.2]), pt(&[0.3, 0.4])]);
        assert_eq!(serde_json::to_string(&c).unwrap(), "[[0.1,0.2],[0.3,0.4]]");
        let back: Configuration = serde_json::from_str("[[0.1,0.2],[0.3,0.4]]").unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn lp_rejects_non_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = lp_expectation(|_| f64::NAN, &Domain::unit(1), 10, &mut rng);
        assert!(matches!(r, Err(Error::NonFinite { .. })));
    }

    #[test]
    fn ibp_blow_up_guard() {
        // 40 expected points: the subset sum must refuse.
        let dom = Domain::new(1, 40.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = verify_ibp(|_, _| 1.0, &dom, 5, &mut rng);
        assert!(matches!(r, Err(Error::SubsetBlowUp { .. })));
    }

    #[test]
    fn lp_empty_indicator() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let e = lp_expectation(|eta| f64::from(u8::from(eta.is_empty())), &Domain::unit(1), 20_000, &mut rng)
            .unwrap();
        assert!((e.estimate - 1.0).abs() <= 3.0 * e.std_error);
    }
}
