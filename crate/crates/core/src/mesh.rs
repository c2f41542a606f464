//! Conforming triangle mesh on a half-edge structure.
//!
//! Faces own three half-edges in a fixed layout (`3f`, `3f+1`, `3f+2`), so
//! `next` is implicit. Twins are resolved through an undirected edge map when
//! the mesh is built; a missing twin marks a boundary edge. Meshes are
//! immutable after construction and all queries take `&self`.

use crate::dyadic::DPoint;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

pub const NO_TWIN: usize = usize::MAX;

#[derive(Debug, Error, PartialEq)]
pub enum MeshError {
    #[error("face {face} is degenerate (zero signed area)")]
    DegenerateFace { face: usize },
    #[error("face {face} has negative orientation")]
    NegativeOrientation { face: usize },
    #[error("edge ({a},{b}) is shared by more than two faces")]
    NonManifoldEdge { a: usize, b: usize },
    #[error("face {face} references missing vertex {vertex}")]
    BadIndex { face: usize, vertex: usize },
    #[error("face {face} repeats vertex {vertex}")]
    RepeatedVertex { face: usize, vertex: usize },
    #[error("conformity violation: {0}")]
    NotConforming(String),
}

/// Per-face complex dilatation, stored as `[re, im]`.
pub type Mu = [f64; 2];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HalfEdgeMesh {
    vertices: Vec<[f64; 2]>,
    /// Exact dyadic coordinates, when every vertex is exactly dyadic.
    exact: Option<Vec<DPoint>>,
    /// `faces[f]` = vertex triple, counterclockwise.
    faces: Vec<[usize; 3]>,
    /// `twin[h]` for half-edge `h = 3f + k` (origin `faces[f][k]`,
    /// target `faces[f][(k+1)%3]`); `NO_TWIN` on the boundary.
    twin: Vec<usize>,
    /// Per-face dilatation toward its assigned equilateral target.
    mu: Vec<Option<Mu>>,
    boundary_vertex: Vec<bool>,
}

pub fn he_face(h: usize) -> usize {
    h / 3
}

pub fn he_next(h: usize) -> usize {
    3 * (h / 3) + (h + 1) % 3
}

impl HalfEdgeMesh {
    pub fn build(vertices: Vec<[f64; 2]>, faces: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        Self::build_with_mu(vertices, faces, None)
    }

    pub fn build_with_mu(
        vertices: Vec<[f64; 2]>,
        faces: Vec<[usize; 3]>,
        mu: Option<Vec<Option<Mu>>>,
    ) -> Result<Self, MeshError> {
        for (f, tri) in faces.iter().enumerate() {
            for &v in tri {
                if v >= vertices.len() {
                    return Err(MeshError::BadIndex { face: f, vertex: v });
                }
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(MeshError::RepeatedVertex { face: f, vertex: tri[0] });
            }
            let area = signed_area(&vertices, tri);
            if area == 0.0 {
                return Err(MeshError::DegenerateFace { face: f });
            }
            if area < 0.0 {
                return Err(MeshError::NegativeOrientation { face: f });
            }
        }
        let mut twin = vec![NO_TWIN; 3 * faces.len()];
        let mut edge_map: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for (f, tri) in faces.iter().enumerate() {
            for k in 0..3 {
                let h = 3 * f + k;
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                match edge_map.get(&key) {
                    None => {
                        edge_map.insert(key, h);
                    }
                    Some(&prev) if twin[prev] == NO_TWIN => {
                        twin[prev] = h;
                        twin[h] = prev;
                    }
                    Some(_) => return Err(MeshError::NonManifoldEdge { a: key.0, b: key.1 }),
                }
            }
        }
        let mut boundary_vertex = vec![false; vertices.len()];
        for (h, &t) in twin.iter().enumerate() {
            if t == NO_TWIN {
                let f = he_face(h);
                let k = h % 3;
                boundary_vertex[faces[f][k]] = true;
                boundary_vertex[faces[f][(k + 1) % 3]] = true;
            }
        }
        let mu = mu.unwrap_or_else(|| vec![None; faces.len()]);
        assert_eq!(mu.len(), faces.len());
        Ok(Self { vertices, exact: None, faces, twin, mu, boundary_vertex })
    }

    /// Attach exact dyadic coordinates (must match the f64 table in length).
    pub fn with_exact(mut self, exact: Vec<DPoint>) -> Self {
        assert_eq!(exact.len(), self.vertices.len());
        self.exact = Some(exact);
        self
    }

    /// Merge triangle fragments into one mesh, welding vertices with
    /// bit-identical coordinates. Welding never happens implicitly anywhere
    /// else; fragments that must share seams are built to emit identical bits.
    pub fn weld_fragments(
        fragments: &[(Vec<[f64; 2]>, Vec<[usize; 3]>, Vec<Option<Mu>>)],
    ) -> Result<Self, MeshError> {
        let mut key_to_index: BTreeMap<(u64, u64), usize> = BTreeMap::new();
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        let mut mu = Vec::new();
        for (vs, fs, ms) in fragments {
            let mut remap = Vec::with_capacity(vs.len());
            for v in vs {
                let key = (v[0].to_bits(), v[1].to_bits());
                let idx = *key_to_index.entry(key).or_insert_with(|| {
                    vertices.push(*v);
                    vertices.len() - 1
                });
                remap.push(idx);
            }
            for tri in fs {
                faces.push([remap[tri[0]], remap[tri[1]], remap[tri[2]]]);
            }
            mu.extend_from_slice(ms);
        }
        Self::build_with_mu(vertices, faces, Some(mu))
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn vertex(&self, v: usize) -> [f64; 2] {
        self.vertices[v]
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn exact_vertices(&self) -> Option<&[DPoint]> {
        self.exact.as_deref()
    }

    pub fn face(&self, f: usize) -> [usize; 3] {
        self.faces[f]
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn twin(&self, h: usize) -> usize {
        self.twin[h]
    }

    pub fn mu(&self, f: usize) -> Option<Mu> {
        self.mu[f]
    }

    pub fn mu_table(&self) -> &[Option<Mu>] {
        &self.mu
    }

    pub fn set_mu_table(&mut self, mu: Vec<Option<Mu>>) {
        assert_eq!(mu.len(), self.faces.len());
        self.mu = mu;
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.boundary_vertex[v]
    }

    pub fn boundary_vertices(&self) -> Vec<usize> {
        (0..self.vertices.len()).filter(|&v| self.boundary_vertex[v]).collect()
    }

    pub fn face_points(&self, f: usize) -> [[f64; 2]; 3] {
        let t = self.faces[f];
        [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]]
    }

    pub fn face_area(&self, f: usize) -> f64 {
        signed_area(&self.vertices, &self.faces[f]) / 2.0
    }

    /// Diameter of a triangle is its longest side.
    pub fn face_diameter(&self, f: usize) -> f64 {
        let p = self.face_points(f);
        let mut d: f64 = 0.0;
        for k in 0..3 {
            d = d.max(dist(p[k], p[(k + 1) % 3]));
        }
        d
    }

    /// Undirected edges as (min vertex, max vertex) with one representative
    /// half-edge.
    pub fn undirected_edges(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for h in 0..self.twin.len() {
            let t = self.twin[h];
            if t == NO_TWIN || h < t {
                let (a, b) = self.he_endpoints(h);
                out.push((a.min(b), a.max(b), h));
            }
        }
        out
    }

    pub fn he_endpoints(&self, h: usize) -> (usize, usize) {
        let f = he_face(h);
        let k = h % 3;
        (self.faces[f][k], self.faces[f][(k + 1) % 3])
    }

    /// Vertex degree = number of incident undirected edges.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.vertices.len()];
        for &(a, b, _) in &self.undirected_edges() {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    /// Full conformity scan: twin involution, matching endpoints with opposite
    /// orientation, manifold edges, positive areas.
    pub fn check_conforming(&self) -> Result<(), MeshError> {
        for h in 0..self.twin.len() {
            let t = self.twin[h];
            if t == NO_TWIN {
                continue;
            }
            if t >= self.twin.len() || self.twin[t] != h {
                return Err(MeshError::NotConforming(format!(
                    "twin involution broken at half-edge {h}"
                )));
            }
            let (a, b) = self.he_endpoints(h);
            let (c, d) = self.he_endpoints(t);
            if (a, b) != (d, c) {
                return Err(MeshError::NotConforming(format!(
                    "half-edge {h} ({a},{b}) twinned with {t} ({c},{d})"
                )));
            }
        }
        for (f, tri) in self.faces.iter().enumerate() {
            if signed_area(&self.vertices, tri) <= 0.0 {
                return Err(MeshError::NotConforming(format!(
                    "face {f} not positively oriented"
                )));
            }
        }
        Ok(())
    }

    /// Minimum corner angle over all faces, in degrees. Empty mesh: 180.
    pub fn min_angle_deg(&self) -> f64 {
        self.min_angle_deg_filtered(|_| true)
    }

    /// Minimum corner angle over faces selected by `keep`.
    pub fn min_angle_deg_filtered(&self, keep: impl Fn(usize) -> bool) -> f64 {
        let mut min = 180.0f64;
        for f in 0..self.faces.len() {
            if !keep(f) {
                continue;
            }
            let p = self.face_points(f);
            for k in 0..3 {
                min = min.min(corner_angle_deg(p[k], p[(k + 1) % 3], p[(k + 2) % 3]));
            }
        }
        min
    }

    /// Degree histogram (index = degree) and maximum degree.
    pub fn degree_stats(&self) -> (Vec<usize>, usize) {
        let deg = self.degrees();
        let max = deg.iter().copied().max().unwrap_or(0);
        let mut hist = vec![0usize; max + 1];
        for d in deg {
            hist[d] += 1;
        }
        (hist, max)
    }

    /// Geometric T-vertex scan (vertex lying strictly inside another face's
    /// edge). Quadratic with a bounding-box prune; intended for tests and
    /// modest meshes.
    pub fn check_no_t_vertices(&self, tol: f64) -> Result<(), MeshError> {
        let edges = self.undirected_edges();
        for (v, p) in self.vertices.iter().enumerate() {
            for &(a, b, _) in &edges {
                if v == a || v == b {
                    continue;
                }
                let (pa, pb) = (self.vertices[a], self.vertices[b]);
                if p[0] < pa[0].min(pb[0]) - tol
                    || p[0] > pa[0].max(pb[0]) + tol
                    || p[1] < pa[1].min(pb[1]) - tol
                    || p[1] > pa[1].max(pb[1]) + tol
                {
                    continue;
                }
                let d = point_seg_dist(*p, pa, pb);
                if d < tol {
                    return Err(MeshError::NotConforming(format!(
                        "vertex {v} lies on edge ({a},{b})"
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn signed_area(vertices: &[[f64; 2]], tri: &[usize; 3]) -> f64 {
    let [a, b, c] = [vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]];
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

pub fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Angle at `at` formed by rays to `p` and `q`, in degrees.
pub fn corner_angle_deg(at: [f64; 2], p: [f64; 2], q: [f64; 2]) -> f64 {
    let u = [p[0] - at[0], p[1] - at[1]];
    let v = [q[0] - at[0], q[1] - at[1]];
    let cross = u[0] * v[1] - u[1] * v[0];
    let dot = u[0] * v[0] + u[1] * v[1];
    cross.abs().atan2(dot).to_degrees()
}

pub fn point_seg_dist(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let w = [p[0] - a[0], p[1] - a[1]];
    let dd = d[0] * d[0] + d[1] * d[1];
    if dd == 0.0 {
        return dist(p, a);
    }
    let t = ((w[0] * d[0] + w[1] * d[1]) / dd).clamp(0.0, 1.0);
    dist(p, [a[0] + t * d[0], a[1] + t * d[1]])
}
