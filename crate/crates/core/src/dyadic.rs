//! Exact dyadic rational arithmetic.
//!
//! A dyadic rational is `m * 2^-e` with integer mantissa and exponent. All
//! contour and decomposition coordinates are dyadic, so the separation and
//! distance invariants can be checked with zero tolerance. Mantissas are kept
//! in `i128`; overflow panics rather than silently losing exactness.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::fmt;

/// Exact dyadic rational `m * 2^-e`, canonical: `m` odd or zero (then `e=0`).
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dyadic {
    m: i128,
    e: i32,
}

impl Dyadic {
    pub const ZERO: Dyadic = Dyadic { m: 0, e: 0 };
    pub const ONE: Dyadic = Dyadic { m: 1, e: 0 };

    pub fn new(m: i128, e: i32) -> Self {
        Self { m, e }.normalized()
    }

    /// `1 / 2^k` for `k >= 0`, or `2^-k` for negative `k`.
    pub fn pow2(k: i32) -> Self {
        Self { m: 1, e: k }
    }

    pub fn from_int(v: i64) -> Self {
        Self::new(v as i128, 0)
    }

    fn normalized(mut self) -> Self {
        if self.m == 0 {
            self.e = 0;
            return self;
        }
        while self.m & 1 == 0 {
            self.m >>= 1;
            self.e -= 1;
        }
        self
    }

    pub fn mantissa(&self) -> i128 {
        self.m
    }

    pub fn exponent(&self) -> i32 {
        self.e
    }

    pub fn is_zero(&self) -> bool {
        self.m == 0
    }

    pub fn sign(&self) -> i32 {
        self.m.signum() as i32
    }

    pub fn neg(&self) -> Self {
        Self { m: -self.m, e: self.e }
    }

    pub fn abs(&self) -> Self {
        Self { m: self.m.abs(), e: self.e }
    }

    fn align(a: &Self, b: &Self) -> (i128, i128, i32) {
        let e = a.e.max(b.e);
        let ma = a.m.checked_shl((e - a.e) as u32).expect("dyadic overflow");
        let mb = b.m.checked_shl((e - b.e) as u32).expect("dyadic overflow");
        (ma, mb, e)
    }

    pub fn add(&self, o: &Self) -> Self {
        let (ma, mb, e) = Self::align(self, o);
        Self::new(ma.checked_add(mb).expect("dyadic overflow"), e)
    }

    pub fn sub(&self, o: &Self) -> Self {
        self.add(&o.neg())
    }

    pub fn mul(&self, o: &Self) -> Self {
        Self::new(
            self.m.checked_mul(o.m).expect("dyadic overflow"),
            self.e.checked_add(o.e).expect("dyadic exponent overflow"),
        )
    }

    pub fn mul_int(&self, k: i128) -> Self {
        Self::new(self.m.checked_mul(k).expect("dyadic overflow"), self.e)
    }

    /// Exact halving.
    pub fn half(&self) -> Self {
        Self::new(self.m, self.e + 1)
    }

    pub fn square(&self) -> Self {
        self.mul(self)
    }

    pub fn min(a: Self, b: Self) -> Self {
        if a <= b { a } else { b }
    }

    pub fn max(a: Self, b: Self) -> Self {
        if a >= b { a } else { b }
    }

    pub fn to_f64(&self) -> f64 {
        self.m as f64 * (self.e as f64 * -1.0).exp2()
    }

    /// Largest dyadic of the form `k * 2^-prec` that is `<= x`.
    pub fn floor_with_precision(x: f64, prec: i32) -> Self {
        assert!(x.is_finite());
        let scaled = (x * (prec as f64).exp2()).floor();
        assert!(scaled.abs() < 9.0e18, "floor_with_precision out of range");
        Self::new(scaled as i128, prec)
    }
}

impl PartialOrd for Dyadic {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Dyadic {
    fn cmp(&self, other: &Self) -> Ordering {
        let (ma, mb, _) = Self::align(self, other);
        ma.cmp(&mb)
    }
}

impl fmt::Debug for Dyadic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}*2^{}", self.m, -self.e)
    }
}

impl fmt::Display for Dyadic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_f64())
    }
}

/// Serialized form: `{"m": ..., "e": ...}` meaning `m * 2^-e`.
#[derive(Serialize, Deserialize)]
struct DyadicRepr {
    m: i64,
    e: i32,
}

impl Serialize for Dyadic {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let m = i64::try_from(self.m).map_err(|_| {
            serde::ser::Error::custom("dyadic mantissa exceeds serializable range")
        })?;
        DyadicRepr { m, e: self.e }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Dyadic {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = DyadicRepr::deserialize(d)?;
        Ok(Dyadic::new(r.m as i128, r.e))
    }
}

/// Point with exact dyadic coordinates.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct DPoint {
    pub x: Dyadic,
    pub y: Dyadic,
}

impl DPoint {
    pub fn new(x: Dyadic, y: Dyadic) -> Self {
        Self { x, y }
    }

    pub fn from_ints(x: i64, y: i64) -> Self {
        Self::new(Dyadic::from_int(x), Dyadic::from_int(y))
    }

    pub fn to_f64(&self) -> [f64; 2] {
        [self.x.to_f64(), self.y.to_f64()]
    }

    /// Exact squared Euclidean distance.
    pub fn dist2(&self, o: &DPoint) -> Dyadic {
        let dx = self.x.sub(&o.x);
        let dy = self.y.sub(&o.y);
        dx.square().add(&dy.square())
    }
}

/// Axis-parallel dyadic square `[j,j+1] x [k,k+1]` at scale `2^-n`.
///
/// Two dyadic squares either have disjoint interiors or one contains the
/// other, which is what makes the maximal-square decomposition well defined.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct DyadicSquare {
    pub j: i64,
    pub k: i64,
    pub n: i32,
}

impl DyadicSquare {
    pub fn new(j: i64, k: i64, n: i32) -> Self {
        Self { j, k, n }
    }

    /// Side length `2^-n`.
    pub fn side(&self) -> Dyadic {
        Dyadic::pow2(self.n)
    }

    pub fn corner_min(&self) -> DPoint {
        DPoint::new(
            Dyadic::new(self.j as i128, self.n),
            Dyadic::new(self.k as i128, self.n),
        )
    }

    pub fn corner_max(&self) -> DPoint {
        DPoint::new(
            Dyadic::new(self.j as i128 + 1, self.n),
            Dyadic::new(self.k as i128 + 1, self.n),
        )
    }

    pub fn center(&self) -> DPoint {
        DPoint::new(
            Dyadic::new(2 * self.j as i128 + 1, self.n + 1),
            Dyadic::new(2 * self.k as i128 + 1, self.n + 1),
        )
    }

    /// The concentric square scaled by an odd integer factor (3Q for factor 3).
    /// Returned as exact corner coordinates.
    pub fn scaled_corners(&self, factor: i128) -> (DPoint, DPoint) {
        debug_assert!(factor >= 1 && factor % 2 == 1);
        // center +- factor * side/2
        let half = Dyadic::new(factor, self.n + 1);
        let c = self.center();
        (
            DPoint::new(c.x.sub(&half), c.y.sub(&half)),
            DPoint::new(c.x.add(&half), c.y.add(&half)),
        )
    }

    pub fn parent(&self) -> DyadicSquare {
        DyadicSquare::new(self.j.div_euclid(2), self.k.div_euclid(2), self.n - 1)
    }

    pub fn children(&self) -> [DyadicSquare; 4] {
        let (j, k, n) = (2 * self.j, 2 * self.k, self.n + 1);
        [
            DyadicSquare::new(j, k, n),
            DyadicSquare::new(j + 1, k, n),
            DyadicSquare::new(j, k + 1, n),
            DyadicSquare::new(j + 1, k + 1, n),
        ]
    }

    /// Squares sharing an edge or corner (including different scales is the
    /// caller's business; this is the same-scale 8-neighborhood).
    pub fn same_scale_neighbors(&self) -> Vec<DyadicSquare> {
        let mut v = Vec::with_capacity(8);
        for dj in -1..=1i64 {
            for dk in -1..=1i64 {
                if dj != 0 || dk != 0 {
                    v.push(DyadicSquare::new(self.j + dj, self.k + dk, self.n));
                }
            }
        }
        v
    }
}
