//! Subdivision operators and three-coloring.

use crate::mesh::{he_face, HalfEdgeMesh, MeshError, NO_TWIN};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ColorError {
    #[error("mesh is not 3-colorable; obstruction cycle {cycle:?}")]
    NotThreeColorable {
        /// Interior vertex whose link is an odd cycle, when one exists.
        center: Option<usize>,
        /// Odd closed walk witnessing the obstruction.
        cycle: Vec<usize>,
    },
}

fn midpoint(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0]
}

/// Midpoints are created once per undirected edge, so the result conforms by
/// construction.
fn edge_midpoints(mesh: &HalfEdgeMesh) -> (Vec<[f64; 2]>, BTreeMap<(usize, usize), usize>) {
    let mut verts = mesh.vertices().to_vec();
    let mut mid = BTreeMap::new();
    for (a, b, _) in mesh.undirected_edges() {
        let m = verts.len();
        verts.push(midpoint(mesh.vertex(a), mesh.vertex(b)));
        mid.insert((a, b), m);
    }
    (verts, mid)
}

/// Split every triangle into four by connecting edge midpoints. Equilateral
/// input stays equilateral with half the side length. Face dilatations carry
/// over to the four children (the four pieces are similar to the parent).
pub fn subdivide4(mesh: &HalfEdgeMesh) -> Result<HalfEdgeMesh, MeshError> {
    let (verts, mid) = edge_midpoints(mesh);
    let m = |a: usize, b: usize| mid[&(a.min(b), a.max(b))];
    let mut faces = Vec::with_capacity(4 * mesh.face_count());
    let mut mu = Vec::with_capacity(4 * mesh.face_count());
    for f in 0..mesh.face_count() {
        let [a, b, c] = mesh.face(f);
        let (mab, mbc, mca) = (m(a, b), m(b, c), m(c, a));
        faces.push([a, mab, mca]);
        faces.push([mab, b, mbc]);
        faces.push([mca, mbc, c]);
        faces.push([mab, mbc, mca]);
        for _ in 0..4 {
            mu.push(mesh.mu(f));
        }
    }
    HalfEdgeMesh::build_with_mu(verts, faces, Some(mu))
}

/// Barycentric subdivision: each triangle splits into six around its centroid.
/// The output is properly 3-colorable (original vertices / edge midpoints /
/// face centers) and every interior vertex has even degree.
pub fn barycentric_subdivide(mesh: &HalfEdgeMesh) -> Result<HalfEdgeMesh, MeshError> {
    let (mut verts, mid) = edge_midpoints(mesh);
    let m = |a: usize, b: usize| mid[&(a.min(b), a.max(b))];
    let mut faces = Vec::with_capacity(6 * mesh.face_count());
    for f in 0..mesh.face_count() {
        let [a, b, c] = mesh.face(f);
        let [pa, pb, pc] = [mesh.vertex(a), mesh.vertex(b), mesh.vertex(c)];
        let center = verts.len();
        verts.push([
            (pa[0] + pb[0] + pc[0]) / 3.0,
            (pa[1] + pb[1] + pc[1]) / 3.0,
        ]);
        for (u, v) in [(a, b), (b, c), (c, a)] {
            let w = m(u, v);
            faces.push([u, w, center]);
            faces.push([w, v, center]);
        }
    }
    HalfEdgeMesh::build(verts, faces)
}

/// Proper 3-coloring by forced propagation across shared edges: two colored
/// vertices of a face force the third. Succeeds exactly when a proper
/// coloring exists on each edge-connected component.
pub fn three_color(mesh: &HalfEdgeMesh) -> Result<Vec<u8>, ColorError> {
    let nv = mesh.vertex_count();
    let mut color: Vec<Option<u8>> = vec![None; nv];
    let mut face_seen = vec![false; mesh.face_count()];

    for seed in 0..mesh.face_count() {
        if face_seen[seed] {
            continue;
        }
        seed_face(mesh, seed, &mut color)?;
        let mut queue = vec![seed];
        face_seen[seed] = true;
        while let Some(f) = queue.pop() {
            force_face(mesh, f, &mut color)?;
            for k in 0..3 {
                let t = mesh.twin(3 * f + k);
                if t != NO_TWIN && !face_seen[he_face(t)] {
                    face_seen[he_face(t)] = true;
                    queue.push(he_face(t));
                }
            }
        }
    }
    Ok(color.into_iter().map(|c| c.unwrap_or(0)).collect())
}

fn seed_face(mesh: &HalfEdgeMesh, f: usize, color: &mut [Option<u8>]) -> Result<(), ColorError> {
    let tri = mesh.face(f);
    let mut used = [false; 3];
    for &v in &tri {
        if let Some(c) = color[v] {
            if used[c as usize] {
                return Err(obstruction(mesh, f));
            }
            used[c as usize] = true;
        }
    }
    for &v in &tri {
        if color[v].is_none() {
            let c = (0..3).find(|&c| !used[c]).unwrap();
            used[c] = true;
            color[v] = Some(c as u8);
        }
    }
    Ok(())
}

fn force_face(mesh: &HalfEdgeMesh, f: usize, color: &mut [Option<u8>]) -> Result<(), ColorError> {
    let tri = mesh.face(f);
    let assigned: Vec<u8> = tri.iter().filter_map(|&v| color[v]).collect();
    match assigned.len() {
        3 => {
            let mut s = assigned.clone();
            s.sort_unstable();
            s.dedup();
            if s.len() != 3 {
                return Err(obstruction(mesh, f));
            }
        }
        2 => {
            if assigned[0] == assigned[1] {
                return Err(obstruction(mesh, f));
            }
            let missing = (0..3u8).find(|c| !assigned.contains(c)).unwrap();
            for &v in &tri {
                if color[v].is_none() {
                    color[v] = Some(missing);
                }
            }
        }
        _ => unreachable!("propagation reaches faces through shared edges"),
    }
    Ok(())
}

/// On failure, look for an interior vertex of odd degree and report its link
/// cycle; otherwise fall back to the conflicting face's vertices.
fn obstruction(mesh: &HalfEdgeMesh, conflict_face: usize) -> ColorError {
    let deg = mesh.degrees();
    for v in 0..mesh.vertex_count() {
        if !mesh.is_boundary_vertex(v) && deg[v] % 2 == 1 {
            if let Some(cycle) = link_cycle(mesh, v) {
                return ColorError::NotThreeColorable { center: Some(v), cycle };
            }
        }
    }
    ColorError::NotThreeColorable {
        center: None,
        cycle: mesh.face(conflict_face).to_vec(),
    }
}

/// Vertices around an interior vertex, in rotation order.
fn link_cycle(mesh: &HalfEdgeMesh, v: usize) -> Option<Vec<usize>> {
    // find a half-edge with origin v
    let mut start = None;
    for f in 0..mesh.face_count() {
        for k in 0..3 {
            if mesh.face(f)[k] == v {
                start = Some(3 * f + k);
            }
        }
    }
    let start = start?;
    let mut cycle = Vec::new();
    let mut h = start;
    loop {
        let (_, b) = mesh.he_endpoints(h);
        cycle.push(b);
        // rotate around v: twin of the previous half-edge in this face
        let prev = 3 * (h / 3) + (h + 2) % 3;
        let t = mesh.twin(prev);
        if t == NO_TWIN {
            return None; // not interior after all
        }
        h = t;
        if h == start {
            break;
        }
    }
    Some(cycle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::HalfEdgeMesh;

    fn single() -> HalfEdgeMesh {
        HalfEdgeMesh::build(
            vec![[0.0, 0.0], [1.0, 0.0], [0.5, 3f64.sqrt() / 2.0]],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    fn two_adjacent() -> HalfEdgeMesh {
        HalfEdgeMesh::build(
            vec![[0.0, 0.0], [1.0, 0.0], [0.5, 1.0], [0.5, -1.0]],
            vec![[0, 1, 2], [1, 0, 3]],
        )
        .unwrap()
    }

    /// Wheel with a degree-5 hub: not 3-colorable (odd cycle rim).
    fn five_wheel() -> HalfEdgeMesh {
        let mut verts = vec![[0.0, 0.0]];
        for i in 0..5 {
            let t = i as f64 / 5.0 * std::f64::consts::TAU;
            verts.push([t.cos(), t.sin()]);
        }
        let faces = (0..5).map(|i| [0, 1 + i, 1 + (i + 1) % 5]).collect();
        HalfEdgeMesh::build(verts, faces).unwrap()
    }

    #[test]
    fn subdivide4_counts_and_geometry() {
        let m = single();
        let s = subdivide4(&m).unwrap();
        assert_eq!(s.face_count(), 4);
        assert_eq!(s.vertex_count(), 6);
        s.check_conforming().unwrap();
        // equilateral input stays equilateral at half side
        for f in 0..4 {
            let p = s.face_points(f);
            for k in 0..3 {
                let d = crate::mesh::dist(p[k], p[(k + 1) % 3]);
                assert!((d - 0.5).abs() < 1e-12);
            }
        }
        assert!((s.min_angle_deg() - 60.0).abs() < 1e-9);
    }

    #[test]
    fn subdivide4_scales_diameter_exactly_per_step() {
        let m = single();
        let d0 = m.face_diameter(0);
        let mut cur = m;
        for step in 1..=2 {
            cur = subdivide4(&cur).unwrap();
            let want = d0 / (1 << step) as f64;
            for f in 0..cur.face_count() {
                assert!((cur.face_diameter(f) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn subdivide4_midpoint_degree_six() {
        // 2-ring patch: subdivide twice and inspect interior midpoints
        let m = subdivide4(&subdivide4(&single()).unwrap()).unwrap();
        m.check_conforming().unwrap();
        let deg = m.degrees();
        for v in 0..m.vertex_count() {
            if !m.is_boundary_vertex(v) {
                assert_eq!(deg[v], 6, "interior vertex {v}");
            }
        }
    }

    #[test]
    fn barycentric_counts() {
        let m = two_adjacent();
        let b = barycentric_subdivide(&m).unwrap();
        assert_eq!(b.face_count(), 6 * m.face_count());
        b.check_conforming().unwrap();
    }

    #[test]
    fn barycentric_single_triangle() {
        let b = barycentric_subdivide(&single()).unwrap();
        assert_eq!(b.face_count(), 6);
        assert_eq!(b.vertex_count(), 7);
        let colors = three_color(&b).unwrap();
        check_proper(&b, &colors);
    }

    #[test]
    fn barycentric_shared_edge_welds() {
        let b = barycentric_subdivide(&two_adjacent()).unwrap();
        // 4 original + 5 midpoints + 2 centers
        assert_eq!(b.vertex_count(), 11);
        b.check_conforming().unwrap();
    }

    #[test]
    fn barycentric_interior_degrees_even() {
        let b = barycentric_subdivide(&two_adjacent()).unwrap();
        let deg = b.degrees();
        for v in 0..b.vertex_count() {
            if !b.is_boundary_vertex(v) {
                assert_eq!(deg[v] % 2, 0);
            }
        }
    }

    fn check_proper(m: &HalfEdgeMesh, colors: &[u8]) {
        for (a, b, _) in m.undirected_edges() {
            assert_ne!(colors[a], colors[b]);
        }
    }

    #[test]
    fn three_color_single_triangle() {
        let colors = three_color(&single()).unwrap();
        assert_eq!(colors.len(), 3);
        check_proper(&single(), &colors);
    }

    #[test]
    fn five_wheel_not_colorable_with_certificate() {
        let w = five_wheel();
        // independent oracle: brute-force all 3^6 colorings
        let mut colorable = false;
        for mask in 0..3usize.pow(6) {
            let mut c = [0u8; 6];
            let mut m = mask;
            for v in 0..6 {
                c[v] = (m % 3) as u8;
                m /= 3;
            }
            if w.undirected_edges().iter().all(|&(a, b, _)| c[a] != c[b]) {
                colorable = true;
            }
        }
        assert!(!colorable);
        match three_color(&w) {
            Err(ColorError::NotThreeColorable { center, cycle }) => {
                assert_eq!(center, Some(0));
                assert_eq!(cycle.len(), 5);
            }
            Ok(_) => panic!("5-wheel must not be 3-colorable"),
        }
    }
}
