//! Geometry of the discrete torus Z^d_n.
//!
//! Every coordinate is reduced to the window `{-⌊n/2⌋, …, ⌈n/2⌉-1}`. Sites and
//! frequencies share that window. Fields are stored as flat vectors in
//! row-major order over the shifted coordinates `x_i + ⌊n/2⌋`, first axis
//! slowest; this is the order used by every CSV and binary output.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatticeSpec {
    d: usize,
    n: usize,
}

impl LatticeSpec {
    pub fn new(d: usize, n: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidLattice("dimension must be at least 1".into()));
        }
        if n < 2 {
            return Err(Error::InvalidLattice(format!("side length {n} < 2")));
        }
        let sites = (n as u128).checked_pow(d as u32);
        if sites.is_none_or(|s| s > (1u128 << 40)) {
            return Err(Error::InvalidLattice(format!("{n}^{d} sites is too large")));
        }
        Ok(Self { d, n })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn side(&self) -> usize {
        self.n
    }

    pub fn site_count(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    /// Lowest coordinate of the canonical window, `-⌊n/2⌋`.
    pub fn low(&self) -> i64 {
        -((self.n / 2) as i64)
    }

    /// Highest coordinate of the canonical window, `⌈n/2⌉ - 1`.
    pub fn high(&self) -> i64 {
        self.low() + self.n as i64 - 1
    }

    /// Reduces one integer coordinate into the canonical window.
    #[inline]
    pub fn reduce(&self, c: i64) -> i64 {
        let n = self.n as i64;
        let h = (self.n / 2) as i64;
        (c + h).rem_euclid(n) - h
    }

    pub fn canonical(&self, p: &[i64]) -> Result<TorusPoint> {
        self.check_len(p.len())?;
        Ok(TorusPoint { coords: p.iter().map(|&c| self.reduce(c)).collect() })
    }

    pub fn torus_diff(&self, x: &TorusPoint, y: &TorusPoint) -> Result<TorusPoint> {
        self.check_len(x.coords.len())?;
        self.check_len(y.coords.len())?;
        Ok(TorusPoint { coords: x.coords.iter().zip(&y.coords).map(|(a, b)| self.reduce(a - b)).collect() })
    }

    /// All frequencies (equivalently all sites) in flat-index order.
    pub fn frequencies(&self) -> Vec<TorusPoint> {
        (0..self.site_count()).map(|i| self.point(i)).collect()
    }

    pub fn point(&self, index: usize) -> TorusPoint {
        let mut coords = vec![0; self.d];
        self.coords_into(index, &mut coords);
        TorusPoint { coords }
    }

    /// Writes the canonical coordinates of the flat `index` into `out`.
    #[inline]
    pub fn coords_into(&self, mut index: usize, out: &mut [i64]) {
        let low = self.low();
        for slot in out.iter_mut().rev() {
            *slot = (index % self.n) as i64 + low;
            index /= self.n;
        }
    }

    /// Flat index of an arbitrary integer vector (reduced first).
    #[inline]
    pub fn index_of(&self, coords: &[i64]) -> usize {
        let h = (self.n / 2) as i64;
        coords.iter().fold(0usize, |acc, &c| acc * self.n + (self.reduce(c) + h) as usize)
    }

    pub fn flat_index(&self, p: &TorusPoint) -> Result<usize> {
        self.check_len(p.coords.len())?;
        Ok(self.index_of(&p.coords))
    }

    /// Flat index of `-x` for the site with flat index `index`.
    pub fn negated_index(&self, index: usize) -> usize {
        let mut c = vec![0; self.d];
        self.coords_into(index, &mut c);
        c.iter_mut().for_each(|v| *v = -*v);
        self.index_of(&c)
    }

    /// Table `t[i] = index(-x_i)`.
    pub fn negation_table(&self) -> Vec<usize> {
        (0..self.site_count()).map(|i| self.negated_index(i)).collect()
    }

    /// Position of each flat index in the `x mod n` row-major ordering used by FFTs.
    pub fn modular_order(&self) -> Vec<usize> {
        let mut c = vec![0; self.d];
        (0..self.site_count())
            .map(|i| {
                self.coords_into(i, &mut c);
                c.iter().fold(0usize, |acc, &v| acc * self.n + v.rem_euclid(self.n as i64) as usize)
            })
            .collect()
    }

    pub fn check_field(&self, len: usize) -> Result<()> {
        if len != self.site_count() {
            return Err(Error::SizeMismatch { expected: self.site_count(), got: len });
        }
        Ok(())
    }

    pub fn check_same(&self, other: &LatticeSpec) -> Result<()> {
        if self != other {
            return Err(Error::LatticeMismatch(format!("d={} n={} vs d={} n={}", self.d, self.n, other.d, other.n)));
        }
        Ok(())
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: len });
        }
        Ok(())
    }
}

/// A site (or frequency) of the torus in canonical coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TorusPoint {
    pub coords: Vec<i64>,
}

impl TorusPoint {
    pub fn origin(d: usize) -> Self {
        Self { coords: vec![0; d] }
    }

    pub fn norm(&self) -> f64 {
        norm(&self.coords)
    }

    pub fn is_origin(&self) -> bool {
        self.coords.iter().all(|&c| c == 0)
    }
}

#[inline]
pub fn norm(coords: &[i64]) -> f64 {
    coords.iter().map(|&c| (c as f64) * (c as f64)).sum::<f64>().sqrt()
}

/// Joins coordinates with `;` for CSV cells.
pub fn format_coords(coords: &[i64]) -> String {
    coords.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(";")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn canonical_examples() {
        let s1 = LatticeSpec::new(1, 4).unwrap();
        assert_eq!(s1.canonical(&[5]).unwrap().coords, vec![1]);
        assert_eq!(s1.canonical(&[-3]).unwrap().coords, vec![1]);
        let s2 = LatticeSpec::new(2, 8).unwrap();
        assert_eq!(s2.canonical(&[0, 0]).unwrap().coords, vec![0, 0]);
        assert!(matches!(s2.canonical(&[1]), Err(Error::DimensionMismatch { expected: 2, got: 1 })));
    }

    #[test]
    fn window_bounds() {
        let even = LatticeSpec::new(1, 4).unwrap();
        assert_eq!((even.low(), even.high()), (-2, 1));
        let odd = LatticeSpec::new(1, 5).unwrap();
        assert_eq!((odd.low(), odd.high()), (-2, 2));
        assert!(LatticeSpec::new(0, 4).is_err());
        assert!(LatticeSpec::new(2, 1).is_err());
    }

    #[test]
    fn torus_diff_examples() {
        let s = LatticeSpec::new(1, 4).unwrap();
        let x = s.canonical(&[1]).unwrap();
        let y = s.canonical(&[3]).unwrap();
        assert!(s.torus_diff(&x, &x).unwrap().is_origin());
        // 1 - 3 = -2, which is the canonical representative of the class {±2}.
        assert_eq!(s.torus_diff(&x, &y).unwrap().coords, vec![-2]);
        let zero = TorusPoint::origin(1);
        assert_eq!(s.torus_diff(&zero, &y).unwrap(), s.canonical(&[-3]).unwrap());
        let other = TorusPoint::origin(2);
        assert!(s.torus_diff(&x, &other).is_err());
    }

    #[test]
    fn frequency_sets() {
        let s = LatticeSpec::new(1, 2).unwrap();
        let f: Vec<_> = s.frequencies().into_iter().map(|p| p.coords[0]).collect();
        assert_eq!(f, vec![-1, 0]);
        let s2 = LatticeSpec::new(2, 2).unwrap();
        assert_eq!(s2.frequencies().len(), 4);
        assert!(s2.frequencies().iter().any(|w| w.is_origin()));
    }

    #[test]
    fn flat_index_is_row_major_over_shifted_window() {
        let s = LatticeSpec::new(2, 4).unwrap();
        assert_eq!(s.index_of(&[-2, -2]), 0);
        assert_eq!(s.index_of(&[-2, -1]), 1);
        assert_eq!(s.index_of(&[-1, -2]), 4);
        assert_eq!(s.index_of(&[1, 1]), 15);
        let mo = s.modular_order();
        assert_eq!(mo[s.index_of(&[0, 0])], 0);
        assert_eq!(mo[s.index_of(&[-1, 0])], 12);
    }

    proptest! {
        #[test]
        fn canonical_is_idempotent(d in 1usize..4, n in 2usize..11, raw in proptest::collection::vec(-1000i64..1000, 3)) {
            let s = LatticeSpec::new(d, n).unwrap();
            let p = &raw[..d];
            let c = s.canonical(p).unwrap();
            prop_assert_eq!(s.canonical(&c.coords).unwrap(), c.clone());
            for (a, b) in c.coords.iter().zip(p) {
                prop_assert!(*a >= s.low() && *a <= s.high());
                prop_assert_eq!((a - b).rem_euclid(n as i64), 0);
            }
        }

        #[test]
        fn diff_plus_y_recovers_x(n in 2usize..13, x in proptest::collection::vec(-50i64..50, 2), y in proptest::collection::vec(-50i64..50, 2)) {
            let s = LatticeSpec::new(2, n).unwrap();
            let xp = s.canonical(&x).unwrap();
            let yp = s.canonical(&y).unwrap();
            let dxy = s.torus_diff(&xp, &yp).unwrap();
            for i in 0..2 {
                prop_assert_eq!((dxy.coords[i] + yp.coords[i] - xp.coords[i]).rem_euclid(n as i64), 0);
            }
        }
    }

    #[test]
    fn flat_index_is_a_bijection() {
        for (d, n) in [(1, 7), (2, 6), (3, 3)] {
            let s = LatticeSpec::new(d, n).unwrap();
            let mut seen = vec![false; s.site_count()];
            for i in 0..s.site_count() {
                let p = s.point(i);
                let j = s.flat_index(&p).unwrap();
                assert_eq!(i, j);
                assert!(!seen[j]);
                seen[j] = true;
            }
            let mut mo = s.modular_order();
            mo.sort_unstable();
            assert!(mo.iter().enumerate().all(|(i, &v)| i == v));
        }
    }
}
