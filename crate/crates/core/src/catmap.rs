//! Arnold's cat map over an `n x n` torus and the slot permutation it induces.
//!
//! A [`KeySet`] `(k, p, q, n)` selects the matrix `[[1, p], [q, pq + 1]]^k`
//! acting on `Z_n x Z_n`. Linear slot addresses are laid out row-major on the
//! grid (`addr = y * n + x`), pushed through the map and flattened again, which
//! yields a bijection of `[0, n^2)`.
//!
//! The map is linear, so the origin is a fixed point: slot 0 never moves for
//! any key. Callers that care about dispersion must not rely on slot 0.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest supported grid side (65,536 cells).
pub const MAX_N: u32 = 256;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CatMapError {
    #[error("invalid key: {0}")]
    InvalidKey(&'static str),
    #[error("address {addr} outside a grid of {cells} cells")]
    OutOfRange { addr: usize, cells: usize },
    #[error("grid side {n} exceeds the maximum of {MAX_N}")]
    Capacity { n: u32 },
}

/// The chaotic key `(k, p, q)` together with the grid side `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KeySet {
    pub k: u32,
    pub p: u32,
    pub q: u32,
    pub n: u32,
}

impl KeySet {
    pub fn new(k: u32, p: u32, q: u32, n: u32) -> Result<Self, CatMapError> {
        if p == 0 || q == 0 {
            return Err(CatMapError::InvalidKey("p and q must be at least 1"));
        }
        if n == 0 {
            return Err(CatMapError::InvalidKey("grid side must be at least 1"));
        }
        Ok(KeySet { k, p, q, n })
    }

    /// Identity key (`k = 0`) on an `n x n` grid.
    pub fn identity(n: u32) -> Result<Self, CatMapError> {
        Self::new(0, 1, 1, n)
    }

    pub fn with_k(self, k: u32) -> Self {
        KeySet { k, ..self }
    }

    pub fn cells(&self) -> usize {
        (self.n as usize) * (self.n as usize)
    }

    /// The one-step matrix reduced mod `n`.
    pub fn step_matrix(&self) -> Mat2 {
        let n = self.n as u64;
        let p = self.p as u64 % n;
        let q = self.q as u64 % n;
        Mat2([[1 % n, p], [q, (p * q + 1) % n]])
    }

    /// The `k`-th power of the step matrix, by repeated multiplication mod `n`.
    pub fn power_matrix(&self) -> Mat2 {
        let n = self.n as u64;
        let step = self.step_matrix();
        let mut acc = Mat2::identity(n);
        for _ in 0..self.k {
            acc = acc.mul_mod(&step, n);
        }
        acc
    }
}

impl fmt::Display for KeySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "k={} p={} q={} n={}", self.k, self.p, self.q, self.n)
    }
}

/// A 2x2 matrix over `Z_n`, entries kept reduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mat2(pub [[u64; 2]; 2]);

impl Mat2 {
    pub fn identity(n: u64) -> Self {
        Mat2([[1 % n, 0], [0, 1 % n]])
    }

    pub fn mul_mod(&self, rhs: &Mat2, n: u64) -> Mat2 {
        let a = &self.0;
        let b = &rhs.0;
        let mut out = [[0u64; 2]; 2];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (a[i][0] * b[0][j] + a[i][1] * b[1][j]) % n;
            }
        }
        Mat2(out)
    }

    pub fn apply(&self, pt: Point2D, n: u64) -> Point2D {
        let m = &self.0;
        let (x, y) = (pt.x as u64, pt.y as u64);
        Point2D {
            x: ((m[0][0] * x + m[0][1] * y) % n) as u32,
            y: ((m[1][0] * x + m[1][1] * y) % n) as u32,
        }
    }

    /// True when either off-diagonal entry is zero: the map then shears along
    /// one axis and keeps whole rows (or columns) together.
    pub fn is_triangular(&self) -> bool {
        self.0[0][1] == 0 || self.0[1][0] == 0
    }
}

/// A grid coordinate: `x` is the column, `y` the row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Point2D {
    pub x: u32,
    pub y: u32,
}

/// Applies the keyed map to one point.
pub fn map_point(pt: Point2D, key: &KeySet) -> Point2D {
    debug_assert!(pt.x < key.n && pt.y < key.n);
    key.power_matrix().apply(pt, key.n as u64)
}

pub fn addr_to_2d(addr: usize, n: u32) -> Result<Point2D, CatMapError> {
    let side = n as usize;
    let cells = side * side;
    if addr >= cells {
        return Err(CatMapError::OutOfRange { addr, cells });
    }
    Ok(Point2D {
        x: (addr % side) as u32,
        y: (addr / side) as u32,
    })
}

pub fn addr_from_2d(pt: Point2D, n: u32) -> usize {
    pt.y as usize * n as usize + pt.x as usize
}

/// A bijection of `[0, len)`; `self[logical]` is the physical index.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Permutation(Vec<u32>);

impl Permutation {
    pub fn identity(len: usize) -> Self {
        Permutation((0..len as u32).collect())
    }

    /// Wraps a vector after checking that it really is a permutation.
    pub fn from_vec(v: Vec<u32>) -> Option<Self> {
        let mut seen = vec![false; v.len()];
        for &x in &v {
            let slot = seen.get_mut(x as usize)?;
            if *slot {
                return None;
            }
            *slot = true;
        }
        Some(Permutation(v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, logical: usize) -> usize {
        self.0[logical] as usize
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0u32; self.0.len()];
        for (logical, &physical) in self.0.iter().enumerate() {
            inv[physical as usize] = logical as u32;
        }
        Permutation(inv)
    }

    /// `self` applied first, then `next`.
    pub fn then(&self, next: &Permutation) -> Permutation {
        Permutation(self.0.iter().map(|&i| next.0[i as usize]).collect())
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &v)| i as u32 == v)
    }
}

impl std::ops::Index<usize> for Permutation {
    type Output = u32;

    fn index(&self, logical: usize) -> &u32 {
        &self.0[logical]
    }
}

/// The slot permutation induced by `key`.
pub fn permute(key: &KeySet) -> Result<Permutation, CatMapError> {
    if key.n > MAX_N {
        return Err(CatMapError::Capacity { n: key.n });
    }
    let n = key.n;
    let m = key.power_matrix();
    let table = (0..key.cells())
        .map(|logical| {
            let pt = Point2D {
                x: (logical % n as usize) as u32,
                y: (logical / n as usize) as u32,
            };
            addr_from_2d(m.apply(pt, n as u64), n) as u32
        })
        .collect();
    Ok(Permutation(table))
}

pub fn inverse_permute(key: &KeySet) -> Result<Permutation, CatMapError> {
    Ok(permute(key)?.inverse())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeriodInfo {
    pub period: u64,
    pub key: KeySet,
}

/// Smallest `t >= 1` such that the one-step map to the `t` is the identity on
/// the whole grid. `k` is ignored.
///
/// The grid contains both basis vectors, so the map is the identity exactly
/// when the matrix is the identity mod `n`; this walks matrix powers instead
/// of points.
pub fn period(key: &KeySet) -> PeriodInfo {
    let n = key.n as u64;
    let step = key.step_matrix();
    let identity = Mat2::identity(n);
    let mut acc = step;
    let mut t = 1u64;
    while acc != identity {
        acc = acc.mul_mod(&step, n);
        t += 1;
    }
    PeriodInfo { period: t, key: *key }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(k: u32, p: u32, q: u32, n: u32) -> KeySet {
        KeySet::new(k, p, q, n).unwrap()
    }

    // Independent oracle: the map written out coordinate by coordinate,
    // iterated k times.
    fn brute_map(pt: (u64, u64), k: u32, p: u64, q: u64, n: u64) -> (u64, u64) {
        let (mut x, mut y) = pt;
        for _ in 0..k {
            let nx = (x + p * y) % n;
            let ny = (q * x + (p * q + 1) * y) % n;
            x = nx;
            y = ny;
        }
        (x, y)
    }

    fn brute_period(p: u64, q: u64, n: u64) -> u64 {
        let mut pts: Vec<(u64, u64)> = (0..n * n).map(|a| (a % n, a / n)).collect();
        let start = pts.clone();
        let mut t = 0;
        loop {
            for pt in pts.iter_mut() {
                *pt = brute_map(*pt, 1, p, q, n);
            }
            t += 1;
            if pts == start {
                return t;
            }
        }
    }

    #[test]
    fn map_point_examples() {
        assert_eq!(map_point(Point2D { x: 3, y: 5 }, &key(0, 1, 1, 7)), Point2D { x: 3, y: 5 });
        assert_eq!(map_point(Point2D { x: 0, y: 0 }, &key(1, 1, 1, 2)), Point2D { x: 0, y: 0 });
        let (x, y) = brute_map((1, 1), 1, 1, 1, 2);
        assert_eq!((x, y), (0, 1));
        assert_eq!(map_point(Point2D { x: 1, y: 1 }, &key(1, 1, 1, 2)), Point2D { x: 0, y: 1 });
    }

    #[test]
    fn map_point_matches_coordinate_oracle() {
        for n in 1..=9u32 {
            for k in 0..6 {
                for p in 1..4 {
                    for q in 1..4 {
                        let ks = key(k, p, q, n);
                        for a in 0..(n * n) as usize {
                            let pt = addr_to_2d(a, n).unwrap();
                            let got = map_point(pt, &ks);
                            let want = brute_map((pt.x as u64, pt.y as u64), k, p as u64, q as u64, n as u64);
                            assert_eq!((got.x as u64, got.y as u64), want);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn address_conversion() {
        assert_eq!(addr_to_2d(0, 4).unwrap(), Point2D { x: 0, y: 0 });
        assert_eq!(addr_to_2d(5, 4).unwrap(), Point2D { x: 1, y: 1 });
        assert_eq!(addr_to_2d(15, 4).unwrap(), Point2D { x: 3, y: 3 });
        assert!(matches!(addr_to_2d(16, 4), Err(CatMapError::OutOfRange { addr: 16, cells: 16 })));
        assert_eq!(addr_from_2d(Point2D { x: 0, y: 0 }, 4), 0);
        assert_eq!(addr_from_2d(Point2D { x: 1, y: 1 }, 4), 5);
        for n in 1..12 {
            for a in 0..(n * n) as usize {
                assert_eq!(addr_from_2d(addr_to_2d(a, n).unwrap(), n), a);
            }
        }
    }

    #[test]
    fn permute_examples() {
        // Enumerate each address through the coordinate oracle.
        let oracle: Vec<u32> = (0..4u64)
            .map(|a| {
                let (x, y) = brute_map((a % 2, a / 2), 1, 1, 1, 2);
                (y * 2 + x) as u32
            })
            .collect();
        assert_eq!(oracle, vec![0, 3, 1, 2]);
        assert_eq!(permute(&key(1, 1, 1, 2)).unwrap().as_slice(), &oracle[..]);
        assert!(permute(&key(0, 4, 9, 3)).unwrap().is_identity());
        let p5 = brute_period(1, 1, 5) as u32;
        assert!(permute(&key(p5, 1, 1, 5)).unwrap().is_identity());
    }

    #[test]
    fn permute_rejects_oversized_grid() {
        assert_eq!(permute(&key(1, 1, 1, MAX_N + 1)), Err(CatMapError::Capacity { n: MAX_N + 1 }));
    }

    #[test]
    fn inverse_examples() {
        let inv = inverse_permute(&key(1, 1, 1, 2)).unwrap();
        assert_eq!(inv.as_slice(), &[0, 2, 3, 1]);
        assert!(inverse_permute(&key(0, 3, 3, 6)).unwrap().is_identity());
    }

    #[test]
    fn period_examples() {
        assert_eq!(brute_period(1, 1, 5), 10);
        assert_eq!(brute_period(1, 1, 2), 3);
        assert_eq!(period(&key(0, 1, 1, 1)).period, 1);
        assert_eq!(period(&key(0, 1, 1, 5)).period, 10);
        assert_eq!(period(&key(0, 1, 1, 2)).period, 3);
        // k does not matter
        assert_eq!(period(&key(7, 1, 1, 5)).period, 10);
    }

    #[test]
    fn period_matches_point_iteration() {
        for n in 1..=12u32 {
            for p in 1..=4 {
                for q in 1..=4 {
                    assert_eq!(
                        period(&key(0, p, q, n)).period,
                        brute_period(p as u64, q as u64, n as u64),
                        "p={p} q={q} n={n}"
                    );
                }
            }
        }
    }

    #[test]
    fn origin_is_fixed() {
        for n in 1..10 {
            for k in 0..5 {
                assert_eq!(permute(&key(k, 2, 3, n)).unwrap()[0], 0);
            }
        }
    }

    #[test]
    fn key_validation() {
        assert!(KeySet::new(1, 0, 1, 4).is_err());
        assert!(KeySet::new(1, 1, 0, 4).is_err());
        assert!(KeySet::new(1, 1, 1, 0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn permute_then_inverse_is_identity(k in 0u32..40, p in 1u32..17, q in 1u32..17, n in 1u32..=32) {
                let ks = key(k, p, q, n);
                let perm = permute(&ks).unwrap();
                let inv = inverse_permute(&ks).unwrap();
                prop_assert!(perm.then(&inv).is_identity());
                prop_assert!(inv.then(&perm).is_identity());
            }

            #[test]
            fn powers_compose(a in 0u32..10, b in 0u32..10, p in 1u32..6, q in 1u32..6, n in 1u32..=20) {
                let pa = permute(&key(a, p, q, n)).unwrap();
                let pb = permute(&key(b, p, q, n)).unwrap();
                prop_assert_eq!(pa.then(&pb), permute(&key(a + b, p, q, n)).unwrap());
            }

            #[test]
            fn period_power_is_identity(p in 1u32..17, q in 1u32..17, n in 1u32..=16) {
                let t = period(&key(0, p, q, n)).period as u32;
                prop_assert!(permute(&key(t, p, q, n)).unwrap().is_identity());
            }
        }
    }
}
