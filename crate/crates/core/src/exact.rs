//! Exact geometric predicates over dyadic points.
//!
//! Inputs are rescaled to a common power-of-two grid and evaluated in `i128`.
//! Coordinate mantissas are asserted small enough that degree-4 forms cannot
//! overflow; violations panic instead of returning a wrong sign.

use crate::dyadic::{DPoint, Dyadic};
use std::cmp::Ordering;

const MAX_ALIGNED: i128 = 1 << 30;

fn shift(m: i128, by: i32) -> i128 {
    assert!(by >= 0, "exact predicate scale underflow");
    m.checked_shl(by as u32).expect("exact predicate overflow")
}

fn aligned(v: &Dyadic, e: i32) -> i128 {
    let m = shift(v.mantissa(), e - v.exponent());
    assert!(m.abs() < MAX_ALIGNED, "coordinate too fine for exact predicates");
    m
}

fn common_exp(pts: &[&DPoint]) -> i32 {
    pts.iter()
        .flat_map(|p| [p.x.exponent(), p.y.exponent()])
        .max()
        .unwrap_or(0)
        .max(0)
}

fn ipt(p: &DPoint, e: i32) -> (i128, i128) {
    (aligned(&p.x, e), aligned(&p.y, e))
}

fn cross(o: (i128, i128), a: (i128, i128), b: (i128, i128)) -> i128 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Sign of the signed area of triangle `a, b, c` (positive = counterclockwise).
pub fn orient(a: &DPoint, b: &DPoint, c: &DPoint) -> i32 {
    let e = common_exp(&[a, b, c]);
    cross(ipt(a, e), ipt(b, e), ipt(c, e)).signum() as i32
}

/// Is `p` on the closed segment `ab`?
pub fn on_segment(p: &DPoint, a: &DPoint, b: &DPoint) -> bool {
    let e = common_exp(&[p, a, b]);
    let (p, a, b) = (ipt(p, e), ipt(a, e), ipt(b, e));
    if cross(a, b, p) != 0 {
        return false;
    }
    let dot = (p.0 - a.0) * (b.0 - a.0) + (p.1 - a.1) * (b.1 - a.1);
    let dd = (b.0 - a.0).pow(2) + (b.1 - a.1).pow(2);
    dot >= 0 && dot <= dd
}

/// Do closed segments `ab` and `cd` intersect (touching counts)?
pub fn segments_intersect(a: &DPoint, b: &DPoint, c: &DPoint, d: &DPoint) -> bool {
    let e = common_exp(&[a, b, c, d]);
    let (a, b, c, d) = (ipt(a, e), ipt(b, e), ipt(c, e), ipt(d, e));
    let d1 = cross(c, d, a).signum();
    let d2 = cross(c, d, b).signum();
    let d3 = cross(a, b, c).signum();
    let d4 = cross(a, b, d).signum();
    if d1 * d2 < 0 && d3 * d4 < 0 {
        return true;
    }
    let on = |p: (i128, i128), u: (i128, i128), v: (i128, i128)| -> bool {
        cross(u, v, p) == 0
            && (p.0 - u.0) * (v.0 - u.0) + (p.1 - u.1) * (v.1 - u.1) >= 0
            && (p.0 - v.0) * (u.0 - v.0) + (p.1 - v.1) * (u.1 - v.1) >= 0
    };
    on(a, c, d) || on(b, c, d) || on(c, a, b) || on(d, a, b)
}

/// Bound aligned so that squared lengths at grid `2^-e` compare against it.
fn bound_at(bound2: &Dyadic, e: i32) -> i128 {
    assert!(bound2.sign() >= 0);
    shift(bound2.mantissa(), 2 * e - bound2.exponent())
}

fn exp_for_bound(pts: &[&DPoint], bound2: &Dyadic) -> i32 {
    // Need 2e >= bound exponent so the bound lands on the squared grid.
    common_exp(pts).max((bound2.exponent() + 1).div_euclid(2) + 1)
}

/// Compare `dist(p, segment ab)^2` with `bound2`, exactly.
pub fn cmp_point_seg_dist2(p: &DPoint, a: &DPoint, b: &DPoint, bound2: &Dyadic) -> Ordering {
    let e = exp_for_bound(&[p, a, b], bound2);
    let t = bound_at(bound2, e);
    let (p, a, b) = (ipt(p, e), ipt(a, e), ipt(b, e));
    cmp_point_seg_dist2_i(p, a, b, t)
}

fn cmp_point_seg_dist2_i(p: (i128, i128), a: (i128, i128), b: (i128, i128), t: i128) -> Ordering {
    let d = (b.0 - a.0, b.1 - a.1);
    let w = (p.0 - a.0, p.1 - a.1);
    let dd = d.0 * d.0 + d.1 * d.1;
    if dd == 0 {
        return (w.0 * w.0 + w.1 * w.1).cmp(&t);
    }
    let dot = w.0 * d.0 + w.1 * d.1;
    if dot <= 0 {
        (w.0 * w.0 + w.1 * w.1).cmp(&t)
    } else if dot >= dd {
        let u = (p.0 - b.0, p.1 - b.1);
        (u.0 * u.0 + u.1 * u.1).cmp(&t)
    } else {
        // dist^2 = (|w|^2*dd - dot^2) / dd, compare cross-multiplied.
        let lhs = (w.0 * w.0 + w.1 * w.1)
            .checked_mul(dd)
            .expect("exact predicate overflow")
            - dot.checked_mul(dot).expect("exact predicate overflow");
        let rhs = t.checked_mul(dd).expect("exact predicate overflow");
        lhs.cmp(&rhs)
    }
}

/// Compare `dist(segment ab, segment cd)^2` with `bound2`, exactly.
pub fn cmp_seg_seg_dist2(
    a: &DPoint,
    b: &DPoint,
    c: &DPoint,
    d: &DPoint,
    bound2: &Dyadic,
) -> Ordering {
    if segments_intersect(a, b, c, d) {
        return Dyadic::ZERO.cmp(bound2);
    }
    let e = exp_for_bound(&[a, b, c, d], bound2);
    let t = bound_at(bound2, e);
    let (ai, bi, ci, di) = (ipt(a, e), ipt(b, e), ipt(c, e), ipt(d, e));
    let cases = [
        cmp_point_seg_dist2_i(ai, ci, di, t),
        cmp_point_seg_dist2_i(bi, ci, di, t),
        cmp_point_seg_dist2_i(ci, ai, bi, t),
        cmp_point_seg_dist2_i(di, ai, bi, t),
    ];
    // Ordering of the minimum against t.
    if cases.iter().any(|&o| o == Ordering::Less) {
        Ordering::Less
    } else if cases.iter().any(|&o| o == Ordering::Equal) {
        Ordering::Equal
    } else {
        Ordering::Greater
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Location {
    Inside,
    Outside,
    OnBoundary,
}

/// Exact point-in-polygon by crossing parity. The polygon is a closed loop of
/// dyadic vertices (last edge wraps around).
pub fn point_in_polygon(p: &DPoint, poly: &[DPoint]) -> Location {
    assert!(poly.len() >= 3);
    let mut refs: Vec<&DPoint> = poly.iter().collect();
    refs.push(p);
    let e = common_exp(&refs);
    let pi = ipt(p, e);
    let ipts: Vec<(i128, i128)> = poly.iter().map(|q| ipt(q, e)).collect();
    let mut inside = false;
    for i in 0..ipts.len() {
        let a = ipts[i];
        let b = ipts[(i + 1) % ipts.len()];
        // boundary check
        if cross(a, b, pi) == 0
            && (pi.0 - a.0) * (b.0 - a.0) + (pi.1 - a.1) * (b.1 - a.1) >= 0
            && (pi.0 - b.0) * (a.0 - b.0) + (pi.1 - b.1) * (a.1 - b.1) >= 0
        {
            return Location::OnBoundary;
        }
        if (a.1 > pi.1) != (b.1 > pi.1) {
            // x coordinate where edge crosses the horizontal through p,
            // compared to p.x without division.
            let num = (a.0 - pi.0) * (b.1 - a.1) + (pi.1 - a.1) * (b.0 - a.0);
            if b.1 > a.1 {
                if num > 0 {
                    inside = !inside;
                }
            } else if num < 0 {
                inside = !inside;
            }
        }
    }
    if inside {
        Location::Inside
    } else {
        Location::Outside
    }
}

/// Does the closed segment `ab` intersect the closed axis box `[lo, hi]`?
pub fn seg_intersects_box(a: &DPoint, b: &DPoint, lo: &DPoint, hi: &DPoint) -> bool {
    let inside = |p: &DPoint| p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y;
    if inside(a) || inside(b) {
        return true;
    }
    let c0 = *lo;
    let c1 = DPoint::new(hi.x, lo.y);
    let c2 = *hi;
    let c3 = DPoint::new(lo.x, hi.y);
    segments_intersect(a, b, &c0, &c1)
        || segments_intersect(a, b, &c1, &c2)
        || segments_intersect(a, b, &c2, &c3)
        || segments_intersect(a, b, &c3, &c0)
}

pub fn point_in_box(p: &DPoint, lo: &DPoint, hi: &DPoint) -> bool {
    p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dp(x: i64, y: i64) -> DPoint {
        DPoint::from_ints(x, y)
    }

    #[test]
    fn orientation() {
        assert_eq!(orient(&dp(0, 0), &dp(1, 0), &dp(0, 1)), 1);
        assert_eq!(orient(&dp(0, 0), &dp(0, 1), &dp(1, 0)), -1);
        assert_eq!(orient(&dp(0, 0), &dp(1, 1), &dp(2, 2)), 0);
    }

    #[test]
    fn seg_intersection() {
        assert!(segments_intersect(&dp(0, 0), &dp(2, 2), &dp(0, 2), &dp(2, 0)));
        assert!(segments_intersect(&dp(0, 0), &dp(1, 0), &dp(1, 0), &dp(2, 0)));
        assert!(!segments_intersect(&dp(0, 0), &dp(1, 0), &dp(0, 1), &dp(1, 1)));
    }

    #[test]
    fn point_seg_distance() {
        // dist((0,1), [(-1,0),(1,0)])^2 = 1
        let b = Dyadic::ONE;
        assert_eq!(
            cmp_point_seg_dist2(&dp(0, 1), &dp(-1, 0), &dp(1, 0), &b),
            Ordering::Equal
        );
        let small = Dyadic::new(1, 1);
        assert_eq!(
            cmp_point_seg_dist2(&dp(0, 1), &dp(-1, 0), &dp(1, 0), &small),
            Ordering::Greater
        );
        // interior projection case, non-dyadic distance
        let p = dp(1, 1);
        let a = dp(0, 0);
        let c = dp(2, 1);
        // dist^2 = |w|^2 - (w.d)^2/|d|^2 = 2 - 9/5 = 1/5
        assert_eq!(
            cmp_point_seg_dist2(&p, &a, &c, &Dyadic::new(1, 2)),
            Ordering::Less
        ); // 1/5 < 1/4
        assert_eq!(
            cmp_point_seg_dist2(&p, &a, &c, &Dyadic::new(3, 4)),
            Ordering::Greater
        ); // 1/5 > 3/16
    }

    #[test]
    fn polygon_location() {
        let square = vec![dp(0, 0), dp(4, 0), dp(4, 4), dp(0, 4)];
        assert_eq!(point_in_polygon(&dp(1, 1), &square), Location::Inside);
        assert_eq!(point_in_polygon(&dp(5, 1), &square), Location::Outside);
        assert_eq!(point_in_polygon(&dp(4, 2), &square), Location::OnBoundary);
        assert_eq!(point_in_polygon(&dp(0, 0), &square), Location::OnBoundary);
        // ray through a vertex
        assert_eq!(point_in_polygon(&dp(-1, 4), &square), Location::Outside);
    }

    #[test]
    fn box_intersection() {
        let lo = dp(0, 0);
        let hi = dp(2, 2);
        assert!(seg_intersects_box(&dp(-1, 1), &dp(3, 1), &lo, &hi));
        assert!(seg_intersects_box(&dp(1, 1), &dp(5, 5), &lo, &hi));
        assert!(!seg_intersects_box(&dp(3, 0), &dp(3, 5), &lo, &hi));
        // touching a corner counts
        assert!(seg_intersects_box(&dp(2, 2), &dp(4, 4), &lo, &hi));
    }
}
