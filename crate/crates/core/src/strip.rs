//! Guaranteed-angle triangulation of the strip `{x+iy : 0 < y < 2}` using
//! only prescribed boundary vertices.
//!
//! Each half of the strip is meshed independently: a low polygonal guide
//! curve is placed over the boundary partition, dyadic rows of square cells
//! are carved away where they meet or sit below the guide, the surviving
//! cells are split compatibly with their finer lower neighbors, and the
//! region between the resulting staircase and the boundary edge is
//! fan-triangulated from the partition points. The two halves join along a
//! half-integer partition of the center line.
//!
//! Layouts: a finite window with integer ends (vertical walls), a flat
//! `L`-periodic layout that duplicates the seam column (requires a partition
//! point at `x = 0`), and a cyclic layout producing quotient connectivity for
//! the annulus pullback (faces may wrap around the seam; no flat half-edge
//! mesh is built).

use crate::mesh::{HalfEdgeMesh, MeshError};
use std::collections::BTreeMap;
use thiserror::Error;

pub const MAX_GAP: f64 = 0.125;

#[derive(Debug, Error, PartialEq)]
pub enum StripError {
    #[error("partition needs at least two points")]
    TooFewPoints,
    #[error("partition points must be strictly increasing at index {0}")]
    NotIncreasing(usize),
    #[error("gap {0} exceeds 1/8 at index {1}")]
    GapTooWide(f64, usize),
    #[error("adjacent gaps at index {0} differ by more than the declared factor {1}")]
    NotComparable(usize, f64),
    #[error("periodic layout needs period >= 1, got {0}")]
    BadPeriod(f64),
    #[error("window partitions must start and end at integers")]
    WindowNotIntegral,
    #[error("flat periodic partitions must contain x = 0")]
    PeriodicPhase,
    #[error("top and bottom partitions use different layouts")]
    LayoutMismatch,
    #[error("comparability factor must be >= 1, got {0}")]
    BadFactor(f64),
    #[error("guide slope {0} exceeds 1/8 after point {1}")]
    SlopeTooSteep(f64, usize),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// Strictly increasing boundary positions, either on a finite window or on a
/// circle of circumference `period` (positions then live in `[0, period)`).
#[derive(Clone, Debug)]
pub struct BoundaryPartition {
    pub points: Vec<f64>,
    pub period: Option<f64>,
}

impl BoundaryPartition {
    pub fn window(points: Vec<f64>) -> Result<Self, StripError> {
        let p = Self { points, period: None };
        p.basic_checks()?;
        if p.points[0].fract() != 0.0 || p.points[p.points.len() - 1].fract() != 0.0 {
            return Err(StripError::WindowNotIntegral);
        }
        Ok(p)
    }

    pub fn periodic(points: Vec<f64>, period: f64) -> Result<Self, StripError> {
        if !(period >= 1.0) || !period.is_finite() {
            return Err(StripError::BadPeriod(period));
        }
        let p = Self { points, period: Some(period) };
        p.basic_checks()?;
        if p.points[0] < 0.0 || *p.points.last().unwrap() >= period {
            return Err(StripError::NotIncreasing(p.points.len() - 1));
        }
        Ok(p)
    }

    fn basic_checks(&self) -> Result<(), StripError> {
        if self.points.len() < 2 {
            return Err(StripError::TooFewPoints);
        }
        for i in 1..self.points.len() {
            if !(self.points[i] > self.points[i - 1]) {
                return Err(StripError::NotIncreasing(i));
            }
        }
        Ok(())
    }

    /// Gap `k` follows point `k`; periodic partitions wrap the last gap.
    pub fn gaps(&self) -> Vec<f64> {
        let n = self.points.len();
        let mut g: Vec<f64> = (1..n).map(|i| self.points[i] - self.points[i - 1]).collect();
        if let Some(l) = self.period {
            g.push(self.points[0] + l - self.points[n - 1]);
        }
        g
    }

    /// Gaps no wider than 1/8, adjacent gaps comparable within `m`.
    pub fn validate(&self, m: f64) -> Result<(), StripError> {
        if !(m >= 1.0) {
            return Err(StripError::BadFactor(m));
        }
        let gaps = self.gaps();
        for (i, &g) in gaps.iter().enumerate() {
            if g > MAX_GAP * (1.0 + 1e-12) {
                return Err(StripError::GapTooWide(g, i));
            }
        }
        let pairs = if self.period.is_some() { gaps.len() } else { gaps.len() - 1 };
        for i in 0..pairs {
            let a = gaps[i];
            let b = gaps[(i + 1) % gaps.len()];
            let r = a / b;
            if r > m * (1.0 + 1e-12) || r < 1.0 / m * (1.0 - 1e-12) {
                return Err(StripError::NotComparable(i, m));
            }
        }
        Ok(())
    }

    /// `D_k`: minimum of the two gaps adjacent to point `k` (window end
    /// points mirror, using their single real neighbor).
    pub fn d_values(&self) -> Vec<f64> {
        let gaps = self.gaps();
        let n = self.points.len();
        (0..n)
            .map(|k| match self.period {
                Some(_) => gaps[k].min(gaps[(k + gaps.len() - 1) % gaps.len()]),
                None => {
                    if k == 0 {
                        gaps[0]
                    } else if k == n - 1 {
                        gaps[n - 2]
                    } else {
                        gaps[k].min(gaps[k - 1])
                    }
                }
            })
            .collect()
    }
}

/// Guide point above a partition point: height `(3/4) * 2^-j` where
/// `D_k/(16M)` lies in the dyadic bracket `(2^-j-1, 2^-j]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GuidePoint {
    pub x: f64,
    pub y: f64,
    pub j: i32,
}

/// The unique `j` with `q` in `(2^-j-1, 2^-j]`, by exact power-of-two
/// comparisons.
pub fn dyadic_bracket(q: f64) -> i32 {
    debug_assert!(q > 0.0 && q.is_finite());
    let mut j = -(q.log2().ceil()) as i32;
    while q > 2f64.powi(-j) {
        j -= 1;
    }
    while q <= 2f64.powi(-j - 1) {
        j += 1;
    }
    j
}

/// Heights of the guide polyline over the partition. Each height stays below
/// `min(1/64, D_k/8)` and consecutive segments have slope within `[-1/8,
/// 1/8]`.
pub fn sigma_heights(partition: &BoundaryPartition, m: f64) -> Result<Vec<GuidePoint>, StripError> {
    partition.validate(m)?;
    let ds = partition.d_values();
    let mut out = Vec::with_capacity(ds.len());
    for (&x, &d) in partition.points.iter().zip(ds.iter()) {
        let q = d / (16.0 * m);
        let j = dyadic_bracket(q);
        let y = 0.75 * 2f64.powi(-j);
        debug_assert!(y < f64::min(1.0 / 64.0 + 1e-15, d / 8.0));
        out.push(GuidePoint { x, y, j });
    }
    let n = out.len();
    let segs = if partition.period.is_some() { n } else { n - 1 };
    for i in 0..segs {
        let a = out[i];
        let b = out[(i + 1) % n];
        let dx = if i + 1 == n { partition.period.unwrap() - a.x + b.x } else { b.x - a.x };
        let slope = (b.y - a.y) / dx;
        if slope.abs() > 0.125 + 1e-12 {
            return Err(StripError::SlopeTooSteep(slope, i));
        }
    }
    Ok(out)
}

/// Row layout for one half strip of height 1. Row `k >= 1` spans heights
/// `[2^-k, 2^-k+1]`; cells are squares in the window layout and near-squares
/// of width `L / (round(2L) * 2^(k-1))` in the periodic layouts.
#[derive(Clone, Debug)]
enum Layout {
    Window { left: i64, right: i64 },
    Periodic { period: f64, n1: i64 },
}

impl Layout {
    fn cell_width(&self, k: i32) -> f64 {
        match self {
            Layout::Window { .. } => 2f64.powi(-k),
            Layout::Periodic { period, n1 } => period / (n1 << (k - 1)) as f64,
        }
    }

    fn cells_in_row(&self, k: i32) -> i64 {
        match self {
            Layout::Window { left, right } => (right - left) << k,
            Layout::Periodic { n1, .. } => n1 << (k - 1),
        }
    }

    /// x coordinate of cell boundary `i` in row `k`. Integer-times-width
    /// products are bit-stable across rows for shared corners.
    fn x(&self, k: i32, i: i64) -> f64 {
        match self {
            Layout::Window { left, .. } => *left as f64 + i as f64 * 2f64.powi(-k),
            Layout::Periodic { .. } => i as f64 * self.cell_width(k),
        }
    }

    /// Effective span: window width, or the rounded period `n1 * w1`.
    fn span_eff(&self) -> f64 {
        match self {
            Layout::Window { left, right } => (right - left) as f64,
            Layout::Periodic { n1, .. } => *n1 as f64 * self.cell_width(1),
        }
    }
}

/// Piecewise-linear guide with flat (window) or cyclic (periodic) extension.
struct Guide<'a> {
    pts: &'a [GuidePoint],
    period: Option<f64>,
}

impl Guide<'_> {
    fn eval(&self, x: f64) -> f64 {
        let pts = self.pts;
        let n = pts.len();
        match self.period {
            None => {
                if x <= pts[0].x {
                    return pts[0].y;
                }
                if x >= pts[n - 1].x {
                    return pts[n - 1].y;
                }
                let i = pts.partition_point(|p| p.x <= x).max(1);
                let (a, b) = (pts[i - 1], pts[i]);
                a.y + (x - a.x) * (b.y - a.y) / (b.x - a.x)
            }
            Some(l) => {
                let xr = x.rem_euclid(l);
                if xr < pts[0].x || xr >= pts[n - 1].x {
                    let (a, b) = (pts[n - 1], pts[0]);
                    let dx = l - a.x + b.x;
                    let t = if xr >= a.x { xr - a.x } else { xr + l - a.x };
                    a.y + t * (b.y - a.y) / dx
                } else {
                    let i = pts.partition_point(|p| p.x <= xr).max(1);
                    let (a, b) = (pts[i - 1], pts[i]);
                    a.y + (xr - a.x) * (b.y - a.y) / (b.x - a.x)
                }
            }
        }
    }

    fn max_over(&self, a: f64, b: f64) -> f64 {
        let mut m = self.eval(a).max(self.eval(b));
        match self.period {
            None => {
                for p in self.pts {
                    if p.x > a && p.x < b {
                        m = m.max(p.y);
                    }
                }
            }
            Some(l) => {
                for p in self.pts {
                    for shift in [-l, 0.0, l] {
                        let x = p.x + shift;
                        if x > a && x < b {
                            m = m.max(p.y);
                        }
                    }
                }
            }
        }
        m
    }
}

/// Survivor cells and the staircase bounding them from below.
pub struct Carved {
    rows: Vec<Vec<bool>>,
    /// Staircase vertices left to right over the effective span (cyclic
    /// layouts treat the walk as a ring).
    pub walk: Vec<[f64; 2]>,
    layout: Layout,
    cyclic: bool,
}

fn carve(sigma: &[GuidePoint], layout: Layout, period: Option<f64>, cyclic: bool) -> Carved {
    let guide = Guide { pts: sigma, period };
    let depth = sigma.iter().map(|p| p.j).max().unwrap() + 1;
    let mut rows: Vec<Vec<bool>> = Vec::with_capacity(depth as usize);
    for k in 1..=depth {
        let n = layout.cells_in_row(k);
        let bottom = 2f64.powi(-k);
        let mut row = vec![false; n as usize];
        for (i, slot) in row.iter_mut().enumerate() {
            let a = layout.x(k, i as i64);
            let b = layout.x(k, i as i64 + 1);
            *slot = guide.max_over(a, b) <= bottom;
        }
        rows.push(row);
    }
    for k in 2..=depth {
        let (upper, lower) = rows.split_at_mut((k - 1) as usize);
        for (i, &alive) in lower[0].iter().enumerate() {
            if alive {
                debug_assert!(upper[(k - 2) as usize][i / 2], "parent closure broken");
            }
        }
    }

    // depth profile on the finest row
    let finest = layout.cells_in_row(depth) as usize;
    let mut prof = vec![1i32; finest];
    for k in 1..=depth {
        let scale = finest / layout.cells_in_row(k) as usize;
        for (i, &alive) in rows[(k - 1) as usize].iter().enumerate() {
            if alive {
                for c in i * scale..(i + 1) * scale {
                    prof[c] = k;
                }
            }
        }
    }

    // staircase walk: horizontal runs of constant depth with vertical joins;
    // corners of surviving cells are the walk vertices
    let mut walk: Vec<[f64; 2]> = Vec::new();
    let push = |p: [f64; 2], walk: &mut Vec<[f64; 2]>| {
        if walk.last() != Some(&p) {
            walk.push(p);
        }
    };
    let runs = {
        let mut r: Vec<(usize, usize, i32)> = Vec::new(); // [start, end), depth
        let mut c = 0usize;
        while c < finest {
            let d = prof[c];
            let mut e = c + 1;
            while e < finest && prof[e] == d {
                e += 1;
            }
            r.push((c, e, d));
            c = e;
        }
        r
    };
    for (ri, &(c, e, d)) in runs.iter().enumerate() {
        // runs start and end on half-cell boundaries of row d (a carved
        // sibling exposes the parent's bottom-edge midpoint); interior
        // vertices are the row-d cell corners
        let scale = finest / layout.cells_in_row(d) as usize;
        debug_assert!(c % (scale / 2).max(1) == 0 && e % (scale / 2).max(1) == 0);
        let h = 2f64.powi(-d);
        let mut p = c;
        loop {
            push([layout.x(depth, p as i64), h], &mut walk);
            if p == e {
                break;
            }
            p = ((p / scale + 1) * scale).min(e);
        }
        // vertical join toward the next run (wrapping for cyclic layouts)
        let next_depth = if ri + 1 < runs.len() {
            Some(runs[ri + 1].2)
        } else if cyclic && runs.len() > 1 {
            Some(runs[0].2)
        } else {
            None
        };
        if let Some(d2) = next_depth {
            let xb = layout.x(depth, e as i64);
            if d2 > d {
                for k in (d + 1)..=d2 {
                    push([xb, 2f64.powi(-k)], &mut walk);
                }
            } else {
                for k in ((d2 + 1)..=d).rev() {
                    push([xb, 2f64.powi(-k + 1)], &mut walk);
                }
            }
        }
    }
    if cyclic {
        // ring representation: drop the duplicated seam column (x = span)
        let span = layout.span_eff();
        while walk.len() > 1 && walk.last().map(|p| p[0] == span) == Some(true) {
            walk.pop();
        }
    }
    Carved { rows, walk, layout, cyclic }
}

impl Carved {
    pub fn survives(&self, k: i32, i: i64) -> bool {
        let row = &self.rows[(k - 1) as usize];
        let n = row.len() as i64;
        row[i.rem_euclid(n) as usize]
    }

    pub fn depth(&self) -> i32 {
        self.rows.len() as i32
    }

    pub fn row_width(&self, k: i32) -> f64 {
        self.layout.cell_width(k)
    }

    pub fn is_cyclic(&self) -> bool {
        self.cyclic
    }
}

/// One half strip (height 1) above a partition: raw triangle soup plus
/// bookkeeping. In the cyclic layout faces may wrap the seam and no
/// orientation is implied by raw coordinates.
pub struct HalfStrip {
    pub vertices: Vec<[f64; 2]>,
    pub faces: Vec<[usize; 3]>,
    pub bottom: Vec<usize>,
    pub wall_faces: Vec<usize>,
}

#[derive(Clone, Copy, PartialEq)]
enum Mode {
    Window,
    FlatPeriodic,
    Cyclic,
}

fn build_half(partition: &BoundaryPartition, m: f64, mode: Mode) -> Result<HalfStrip, StripError> {
    let sigma = sigma_heights(partition, m)?;
    let layout = match (partition.period, mode) {
        (None, Mode::Window) => Layout::Window {
            left: partition.points[0] as i64,
            right: partition.points[partition.points.len() - 1] as i64,
        },
        (Some(l), Mode::FlatPeriodic | Mode::Cyclic) => {
            Layout::Periodic { period: l, n1: (2.0 * l).round() as i64 }
        }
        _ => return Err(StripError::LayoutMismatch),
    };
    if mode == Mode::FlatPeriodic && partition.points[0] != 0.0 {
        return Err(StripError::PeriodicPhase);
    }
    let cyclic = mode == Mode::Cyclic;
    let carved = carve(&sigma, layout.clone(), partition.period, cyclic);
    let layout = &carved.layout;
    let span = layout.span_eff();

    let mut verts: Vec<[f64; 2]> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    let mut index: BTreeMap<(u64, u64), usize> = BTreeMap::new();
    let mut vid = |p: [f64; 2], verts: &mut Vec<[f64; 2]>| -> usize {
        let key = (p[0].to_bits(), p[1].to_bits());
        *index.entry(key).or_insert_with(|| {
            verts.push(p);
            verts.len() - 1
        })
    };

    // upper structure
    let depth = carved.depth();
    for k in 1..=depth {
        let w = layout.cell_width(k);
        let n = layout.cells_in_row(k);
        let (top, bot) = (2f64.powi(-k + 1), 2f64.powi(-k));
        for i in 0..n {
            if !carved.survives(k, i) {
                continue;
            }
            let xl = layout.x(k, i);
            let xr = layout.x(k, i + 1);
            // midpoint computed on the finer row so shared corners are
            // bit-identical across rows
            let xm = if k < depth { layout.x(k + 1, 2 * i + 1) } else { xl + 0.5 * w };
            let (xr_key, xm_key) = if cyclic && i + 1 == n {
                (layout.x(k, 0), xm) // seam wraps to x = 0
            } else {
                (xr, xm)
            };
            let child_alive =
                k < depth && (carved.survives(k + 1, 2 * i) || carved.survives(k + 1, 2 * i + 1));
            let bl = vid([xl, bot], &mut verts);
            let br = vid([xr_key, bot], &mut verts);
            let tl = vid([xl, top], &mut verts);
            let tr = vid([xr_key, top], &mut verts);
            if child_alive {
                let mb = vid([xm_key, bot], &mut verts);
                faces.push([bl, mb, tl]);
                faces.push([mb, tr, tl]);
                faces.push([mb, br, tr]);
            } else {
                faces.push([bl, br, tr]);
                faces.push([bl, tr, tl]);
            }
        }
    }

    // fan points: partition points, plus a phantom seam duplicate for the
    // flat periodic layout
    let mut fan_pts: Vec<f64> = partition.points.clone();
    if mode == Mode::FlatPeriodic {
        fan_pts.push(span);
    }

    let walk = &carved.walk;
    let wl = walk.len();
    // nearest walk vertex by horizontal distance (ties pick the left)
    let nearest = |x: f64| -> usize {
        let mut best = 0usize;
        let mut bd = f64::INFINITY;
        for (i, p) in walk.iter().enumerate() {
            let mut d = (p[0] - x).abs();
            if cyclic {
                d = d.min((p[0] + span - x).abs()).min((p[0] - span - x).abs());
            }
            if d < bd - 1e-15 {
                bd = d;
                best = i;
            }
        }
        best
    };
    let w_of: Vec<usize> = fan_pts.iter().map(|&x| nearest(x)).collect();

    let np = fan_pts.len();
    let intervals = if cyclic { np } else { np - 1 };
    for k in 0..intervals {
        let k2 = (k + 1) % np;
        let xk = fan_pts[k];
        let xk2 = if k2 == 0 { fan_pts[0] + span } else { fan_pts[k2] };
        let (wa, wb) = (w_of[k], w_of[k2]);
        // chain of walk indices from wa to wb, ascending; only a descending
        // index pair wraps through the seam (cyclic layouts)
        let chain: Vec<usize> = if wb >= wa {
            (wa..=wb).collect()
        } else if cyclic {
            (wa..wl).chain(0..=wb).collect()
        } else {
            return Err(StripError::LayoutMismatch);
        };
        // geometric x for chain positions (unwrapped monotonically)
        let cx = |pos: usize, gi: usize| -> f64 {
            let p = walk[gi];
            if cyclic && pos >= wl.saturating_sub(wa) && gi <= wb && wa + pos >= wl {
                p[0] + span
            } else {
                p[0]
            }
        };
        let vk = vid([xk, 0.0], &mut verts);
        let vk2 = if k2 == 0 {
            vid([fan_pts[0], 0.0], &mut verts) // seam wrap shares the vertex
        } else {
            vid([xk2, 0.0], &mut verts)
        };
        let ya = walk[wa][1];
        let yb = walk[wb][1];
        if yb <= ya + 1e-15 {
            for t in 0..chain.len().saturating_sub(1) {
                let va = vid([walk[chain[t]][0], walk[chain[t]][1]], &mut verts);
                let vb = vid([walk[chain[t + 1]][0], walk[chain[t + 1]][1]], &mut verts);
                let _ = (cx(t, chain[t]), cx(t + 1, chain[t + 1]));
                faces.push([vk, vb, va]);
            }
            let vl = vid([walk[chain[chain.len() - 1]][0], walk[chain[chain.len() - 1]][1]], &mut verts);
            faces.push([vk, vk2, vl]);
        } else {
            for t in 0..chain.len().saturating_sub(1) {
                let va = vid([walk[chain[t]][0], walk[chain[t]][1]], &mut verts);
                let vb = vid([walk[chain[t + 1]][0], walk[chain[t + 1]][1]], &mut verts);
                faces.push([vk2, vb, va]);
            }
            let vf = vid([walk[chain[0]][0], walk[chain[0]][1]], &mut verts);
            faces.push([vk, vk2, vf]);
        }
    }

    let bottom: Vec<usize> = partition
        .points
        .iter()
        .map(|&x| index[&(x.to_bits(), 0f64.to_bits())])
        .collect();

    let mut wall_faces = Vec::new();
    if mode != Mode::Cyclic {
        let xl = match layout {
            Layout::Window { left, .. } => *left as f64,
            Layout::Periodic { .. } => 0.0,
        };
        let xr = xl + span;
        for (f, tri) in faces.iter().enumerate() {
            if tri.iter().any(|&v| verts[v][0] == xl || verts[v][0] == xr) {
                wall_faces.push(f);
            }
        }
    }

    Ok(HalfStrip { vertices: verts, faces, bottom, wall_faces })
}

/// Result of the flat strip construction.
pub struct StripMesh {
    pub mesh: HalfEdgeMesh,
    /// Vertex indices of the bottom partition points (y = 0).
    pub bottom: Vec<usize>,
    /// Vertex indices of the top partition points (y = 2).
    pub top: Vec<usize>,
    /// Faces touching a vertical window wall or the duplicated periodic
    /// seam (excluded from angle statistics).
    pub wall_faces: Vec<usize>,
    pub period: Option<f64>,
}

/// Triangulate the height-2 strip with the given top and bottom partitions.
/// No boundary vertices are added beyond the given ones (flat periodic
/// layouts duplicate the seam column of the fundamental domain).
pub fn strip_triangulate(
    top: &BoundaryPartition,
    bottom: &BoundaryPartition,
    m: f64,
) -> Result<StripMesh, StripError> {
    let mode = match (top.period, bottom.period) {
        (Some(a), Some(b)) if a == b => Mode::FlatPeriodic,
        (None, None) => {
            let (a0, a1) = (top.points[0], *top.points.last().unwrap());
            let (b0, b1) = (bottom.points[0], *bottom.points.last().unwrap());
            if a0 != b0 || a1 != b1 {
                return Err(StripError::LayoutMismatch);
            }
            Mode::Window
        }
        _ => return Err(StripError::LayoutMismatch),
    };
    let lower = build_half(bottom, m, mode)?;
    let upper = build_half(top, m, mode)?;

    let upper_verts: Vec<[f64; 2]> = upper.vertices.iter().map(|&[x, y]| [x, 2.0 - y]).collect();
    let upper_faces: Vec<[usize; 3]> = upper.faces.iter().map(|&[a, b, c]| [a, c, b]).collect();

    let nl = lower.faces.len();
    let mesh = HalfEdgeMesh::weld_fragments(&[
        (lower.vertices.clone(), lower.faces.clone(), vec![None; nl]),
        (upper_verts, upper_faces.clone(), vec![None; upper_faces.len()]),
    ])?;

    let find = |p: [f64; 2]| -> usize {
        mesh.vertices()
            .iter()
            .position(|&v| v[0].to_bits() == p[0].to_bits() && v[1].to_bits() == p[1].to_bits())
            .expect("partition vertex lost in weld")
    };
    let bottom_idx: Vec<usize> = bottom.points.iter().map(|&x| find([x, 0.0])).collect();
    let top_idx: Vec<usize> = top.points.iter().map(|&x| find([x, 2.0])).collect();

    let mut wall_faces = lower.wall_faces.clone();
    wall_faces.extend(upper.wall_faces.iter().map(|f| f + nl));

    Ok(StripMesh { mesh, bottom: bottom_idx, top: top_idx, wall_faces, period: bottom.period })
}

/// Quotient strip for the annulus pullback: faces may wrap around the seam;
/// x coordinates live in `[0, span_eff)`.
pub struct CyclicStrip {
    pub vertices: Vec<[f64; 2]>,
    pub faces: Vec<[usize; 3]>,
    pub bottom: Vec<usize>,
    pub top: Vec<usize>,
    /// Effective circumference (`round(2L) * w1`).
    pub span: f64,
}

pub fn strip_triangulate_cyclic(
    top: &BoundaryPartition,
    bottom: &BoundaryPartition,
    m: f64,
) -> Result<CyclicStrip, StripError> {
    let (la, lb) = (top.period, bottom.period);
    if la.is_none() || la != lb {
        return Err(StripError::LayoutMismatch);
    }
    let lower = build_half(bottom, m, Mode::Cyclic)?;
    let upper = build_half(top, m, Mode::Cyclic)?;
    let span = Layout::Periodic { period: la.unwrap(), n1: (2.0 * la.unwrap()).round() as i64 }
        .span_eff();

    // merge, reflecting the upper half across y = 1 and flipping winding
    let mut verts = lower.vertices.clone();
    let mut faces = lower.faces.clone();
    let mut index: BTreeMap<(u64, u64), usize> = verts
        .iter()
        .enumerate()
        .map(|(i, v)| ((v[0].to_bits(), v[1].to_bits()), i))
        .collect();
    let mut remap = Vec::with_capacity(upper.vertices.len());
    for v in &upper.vertices {
        let p = [v[0], 2.0 - v[1]];
        let key = (p[0].to_bits(), p[1].to_bits());
        let id = *index.entry(key).or_insert_with(|| {
            verts.push(p);
            verts.len() - 1
        });
        remap.push(id);
    }
    for t in &upper.faces {
        faces.push([remap[t[0]], remap[t[2]], remap[t[1]]]);
    }
    let bottom_idx = lower.bottom.clone();
    let top_idx: Vec<usize> = upper.bottom.iter().map(|&v| remap[v]).collect();
    Ok(CyclicStrip { vertices: verts, faces, bottom: bottom_idx, top: top_idx, span })
}

/// Carved state for inspection and tests.
pub struct HalfStripState {
    pub sigma: Vec<GuidePoint>,
    pub carved: Carved,
}

pub fn half_strip_state(partition: &BoundaryPartition, m: f64) -> Result<HalfStripState, StripError> {
    let sigma = sigma_heights(partition, m)?;
    let layout = match partition.period {
        None => Layout::Window {
            left: partition.points[0] as i64,
            right: partition.points[partition.points.len() - 1] as i64,
        },
        Some(l) => Layout::Periodic { period: l, n1: (2.0 * l).round() as i64 },
    };
    let carved = carve(&sigma, layout, partition.period, false);
    Ok(HalfStripState { sigma, carved })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_window(gap: f64, span: i64) -> BoundaryPartition {
        let n = (span as f64 / gap).round() as usize;
        let pts: Vec<f64> = (0..=n).map(|i| i as f64 * (span as f64) / n as f64).collect();
        BoundaryPartition::window(pts).unwrap()
    }

    #[test]
    fn sigma_height_anchor() {
        // gaps 0.1 then 0.125 around a point: D = 0.1; with M = 2 the
        // bracket gives q = 0.1/32 in (2^-9, 2^-8]
        let part = BoundaryPartition::periodic(
            vec![0.0, 0.1, 0.225, 0.35, 0.475, 0.6, 0.725, 0.85, 0.9375],
            1.0,
        )
        .unwrap();
        let sig = sigma_heights(&part, 2.0).unwrap();
        let gp = sig[1];
        assert_eq!(gp.j, 8);
        assert_eq!(gp.y, 0.75 * 2f64.powi(-8));
        let part1 = BoundaryPartition::periodic(
            (0..10).map(|i| i as f64 * 0.1).collect(),
            1.0,
        )
        .unwrap();
        let sig1 = sigma_heights(&part1, 1.0).unwrap();
        assert_eq!(sig1[1].j, 7);
        assert_eq!(sig1[1].y, 3.0 / 512.0);
        assert_eq!(sig1[1].y, 0.005859375);
    }

    #[test]
    fn sigma_uniform_is_horizontal() {
        let p = uniform_window(0.125, 2);
        let sig = sigma_heights(&p, 1.0).unwrap();
        let y0 = sig[0].y;
        assert!(sig.iter().all(|g| g.y == y0));
    }

    #[test]
    fn sigma_rejects_wide_gap() {
        let p = BoundaryPartition::window(vec![0.0, 0.2, 0.3, 1.0]).unwrap();
        assert!(matches!(
            sigma_heights(&p, 8.0),
            Err(StripError::GapTooWide(..))
        ));
    }

    #[test]
    fn dyadic_bracket_boundaries() {
        assert_eq!(dyadic_bracket(0.00625), 7);
        assert_eq!(dyadic_bracket(2f64.powi(-7)), 7); // 2^-j belongs to bracket j
        assert_eq!(dyadic_bracket(2f64.powi(-7) - 1e-12), 7);
        assert_eq!(dyadic_bracket(2f64.powi(-8)), 8);
        assert_eq!(dyadic_bracket(2f64.powi(-7) + 1e-12), 6);
    }

    #[test]
    fn carve_horizontal_guide_oracle() {
        // horizontal guide at (3/4)*2^-j: the staircase sits at 2^-j, the
        // smallest row bottom above the guide (checked against the cell
        // predicate directly)
        let p = uniform_window(0.125, 2);
        let st = half_strip_state(&p, 1.0).unwrap();
        let j = st.sigma[0].j;
        let expect = 2f64.powi(-j);
        for v in &st.carved.walk {
            assert_eq!(v[1], expect, "staircase vertex {v:?}");
        }
        for k in 1..=st.carved.depth() {
            let alive = st.carved.survives(k, 1);
            assert_eq!(alive, 2f64.powi(-k) >= expect, "row {k}");
        }
    }

    #[test]
    fn carve_step_guide_matches_predicate() {
        // one wide gap then narrow gaps: verify every cell against the
        // brute-force predicate, and parent closure
        let mut pts = vec![0.0, 0.125];
        let mut x = 0.125;
        while x < 0.9375 - 1e-9 {
            x += 0.0625;
            pts.push(x);
        }
        let p = BoundaryPartition::periodic(pts, 1.0).unwrap();
        let st = half_strip_state(&p, 2.0).unwrap();
        let sigma = st.sigma.clone();
        let guide = Guide { pts: &sigma, period: Some(1.0) };
        for k in 1..=st.carved.depth() {
            let n = 2i64 << (k - 1);
            for i in 0..n {
                let w = st.carved.row_width(k);
                let (a, b) = (i as f64 * w, (i + 1) as f64 * w);
                let survive = guide.max_over(a, b) <= 2f64.powi(-k);
                assert_eq!(st.carved.survives(k, i), survive, "row {k} cell {i}");
                if k > 1 && st.carved.survives(k, i) {
                    assert!(st.carved.survives(k - 1, i / 2));
                }
            }
        }
    }

    #[test]
    fn staircase_clears_guide() {
        let pts: Vec<f64> = (0..40).map(|i| i as f64 * 0.1).collect();
        let p = BoundaryPartition::periodic(pts, 4.0).unwrap();
        let st = half_strip_state(&p, 1.0).unwrap();
        let sigma = st.sigma.clone();
        let guide = Guide { pts: &sigma, period: Some(4.0) };
        for v in &st.carved.walk {
            assert!(v[1] > guide.eval(v[0]) - 1e-15);
        }
    }

    #[test]
    fn strip_uniform_periodic() {
        let n = 8;
        let pts: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let top = BoundaryPartition::periodic(pts.clone(), 1.0).unwrap();
        let bot = BoundaryPartition::periodic(pts, 1.0).unwrap();
        let s = strip_triangulate(&top, &bot, 1.0).unwrap();
        s.mesh.check_conforming().unwrap();
        for (&vi, &x) in s.bottom.iter().zip(top.points.iter()) {
            assert_eq!(s.mesh.vertex(vi), [x, 0.0]);
        }
        // boundary vertices: 8 given per edge plus the duplicated seam column
        let bottom_count = s.mesh.vertices().iter().filter(|v| v[1] == 0.0).count();
        assert_eq!(bottom_count, 9);
        // periodicity: translating by the period maps the vertex set onto
        // itself (modulo the duplicated fundamental-domain seam)
        let set: std::collections::BTreeSet<(u64, u64)> = s
            .mesh
            .vertices()
            .iter()
            .map(|v| (v[0].to_bits(), v[1].to_bits()))
            .collect();
        for v in s.mesh.vertices() {
            let shifted = [(v[0] + 1.0).rem_euclid(1.0), v[1]];
            assert!(
                set.contains(&(shifted[0].to_bits(), shifted[1].to_bits())),
                "vertex {v:?} has no shifted twin"
            );
        }
    }

    #[test]
    fn strip_mixed_gaps_window() {
        let top = uniform_window(0.125, 3);
        // alternating dyadic gaps 1/8 and 1/16 over [0, 3]: 16 exact pairs
        let mut pts = vec![0.0];
        for i in 0..16 {
            let base = i as f64 * 0.1875;
            pts.push(base + 0.125);
            pts.push(base + 0.1875);
        }
        let bottom = BoundaryPartition::window(pts).unwrap();
        let s = strip_triangulate(&top, &bottom, 3.0).unwrap();
        s.mesh.check_conforming().unwrap();
        let bot_xs: Vec<f64> = s.bottom.iter().map(|&v| s.mesh.vertex(v)[0]).collect();
        assert_eq!(bot_xs, bottom.points);
        let walls: std::collections::BTreeSet<usize> = s.wall_faces.iter().copied().collect();
        let ang = s.mesh.min_angle_deg_filtered(|f| !walls.contains(&f));
        // fan triangles reaching across a gap to staircase vertices at height
        // ~D/(16M) put the floor in the hundredths of a degree for M = 2
        assert!(ang > 0.005, "angle floor {ang}");
        // no triangle in the fan region crosses the guide curve
        let st = half_strip_state(&bottom, 3.0).unwrap();
        let sigma = st.sigma.clone();
        let guide = Guide { pts: &sigma, period: None };
        for f in 0..s.mesh.face_count() {
            let p = s.mesh.face_points(f);
            // faces fully below the staircase rows must stay below the walk,
            // faces above must stay above the guide
            let ymax = p.iter().map(|q| q[1]).fold(f64::MIN, f64::max);
            let ymin = p.iter().map(|q| q[1]).fold(f64::MAX, f64::min);
            if ymax <= 0.5 && ymin == 0.0 {
                // fan triangle: its staircase vertices sit above the guide
                for q in p {
                    if q[1] > 0.0 && q[1] < 0.5 {
                        assert!(q[1] >= guide.eval(q[0]) - 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn cyclic_strip_closes_up() {
        let n = 12;
        let pts: Vec<f64> = (0..n).map(|i| i as f64 * 1.5 / n as f64).collect();
        let top = BoundaryPartition::periodic(pts.clone(), 1.5).unwrap();
        let bot = BoundaryPartition::periodic(pts, 1.5).unwrap();
        let c = strip_triangulate_cyclic(&top, &bot, 1.0).unwrap();
        // Euler check for an annulus: V - E + F = 0
        let mut edges = std::collections::BTreeSet::new();
        for t in &c.faces {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                edges.insert((a.min(b), a.max(b)));
            }
        }
        let euler = c.vertices.len() as i64 - edges.len() as i64 + c.faces.len() as i64;
        assert_eq!(euler, 0, "cyclic strip is a topological annulus");
        // every edge shared by exactly 2 faces except the two boundaries
        let mut count: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for t in &c.faces {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        let boundary_edges = count.values().filter(|&&c| c == 1).count();
        assert_eq!(boundary_edges, 2 * n);
        assert!(count.values().all(|&c| c <= 2));
    }

    #[test]
    fn fan_triangles_count_matches_chain() {
        // decreasing staircase: the quad over each interval carries
        // (#chain vertices) triangles: chain-1 fan triangles plus a closing
        // triangle, verified by explicit enumeration
        let p = uniform_window(0.125, 1);
        let h = build_half(&p, 1.0, Mode::Window).unwrap();
        let st = half_strip_state(&p, 1.0).unwrap();
        // uniform: every interval has the same fan; count faces with apex at
        // a given partition point and all other vertices on the staircase
        let x1 = p.points[1];
        let apex: Vec<&[usize; 3]> = h
            .faces
            .iter()
            .filter(|t| t.iter().any(|&v| h.vertices[v] == [x1, 0.0]))
            .collect();
        // faces at the apex: fan of interval (x1, x2) + closing triangles of
        // intervals (x0, x1) and (x1, x2)
        let walk = &st.carved.walk;
        let in_span = |lo: f64, hi: f64| {
            walk.iter().filter(|v| v[0] >= lo - 1e-12 && v[0] <= hi + 1e-12).count()
        };
        let chain = in_span(p.points[1], p.points[2]);
        assert_eq!(apex.len(), (chain - 1) + 2);
    }
}
