//! Per-triangle Beltrami coefficients of affine maps onto equilateral
//! targets, the mesh-level dilatation certificate, and the edge-wise gluing
//! check for target-length compatibility.

use crate::mesh::{HalfEdgeMesh, NO_TWIN};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DilatationError {
    #[error("source triangle is degenerate")]
    Degenerate,
    #[error("correspondence reverses orientation")]
    ReversedOrientation,
    #[error("face {0} has no target assignment")]
    MissingTarget(usize),
}

/// Complex number as `[re, im]` with just the arithmetic this module needs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Complex {
    pub re: f64,
    pub im: f64,
}

impl Complex {
    pub fn new(re: f64, im: f64) -> Self {
        Self { re, im }
    }

    pub fn sub(self, o: Self) -> Self {
        Self::new(self.re - o.re, self.im - o.im)
    }

    pub fn conj(self) -> Self {
        Self::new(self.re, -self.im)
    }

    pub fn div(self, o: Self) -> Self {
        let d = o.re * o.re + o.im * o.im;
        Self::new(
            (self.re * o.re + self.im * o.im) / d,
            (self.im * o.re - self.re * o.im) / d,
        )
    }

    pub fn mul(self, o: Self) -> Self {
        Self::new(
            self.re * o.re - self.im * o.im,
            self.re * o.im + self.im * o.re,
        )
    }

    pub fn abs(self) -> f64 {
        self.re.hypot(self.im)
    }
}

/// Vertex correspondence: source vertex `k` maps to target vertex
/// `perm[k]` of the equilateral target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Correspondence(pub [u8; 3]);

impl Correspondence {
    pub const IDENTITY: Correspondence = Correspondence([0, 1, 2]);

    pub fn is_even(&self) -> bool {
        matches!(self.0, [0, 1, 2] | [1, 2, 0] | [2, 0, 1])
    }
}

/// Per-face dilatation certificate: the Beltrami coefficient of the affine
/// map sending the source triangle onto its equilateral target under the
/// stored correspondence.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeltramiDatum {
    pub mu: Complex,
    pub target: Correspondence,
    /// Side length of the equilateral target (feeds the gluing tables).
    pub target_side: f64,
}

/// Beltrami coefficient of the affine map taking `source` to an equilateral
/// triangle under `corr`. Normalizing the corresponded edge to `[0,1]` in
/// both source and target, the map is `z -> alpha z + beta conj(z)` and
/// `mu = beta/alpha = (b - a)/(b - conj(a))` with `a` the source apex and
/// `b` the target apex.
pub fn affine_dilatation(
    source: [[f64; 2]; 3],
    corr: Correspondence,
    target_side: f64,
) -> Result<BeltramiDatum, DilatationError> {
    if !corr.is_even() {
        return Err(DilatationError::ReversedOrientation);
    }
    // reorder source so vertex k corresponds to target vertex k
    let mut src = [[0.0; 2]; 3];
    for k in 0..3 {
        src[corr.0[k] as usize] = source[k];
    }
    let z0 = Complex::new(src[0][0], src[0][1]);
    let z1 = Complex::new(src[1][0], src[1][1]);
    let z2 = Complex::new(src[2][0], src[2][1]);
    let den = z1.sub(z0);
    if den.abs() == 0.0 {
        return Err(DilatationError::Degenerate);
    }
    let a = z2.sub(z0).div(den);
    if a.im == 0.0 {
        return Err(DilatationError::Degenerate);
    }
    if a.im < 0.0 {
        return Err(DilatationError::ReversedOrientation);
    }
    let b = Complex::new(0.5, 3f64.sqrt() / 2.0);
    let mu = b.sub(a).div(b.sub(a.conj()));
    Ok(BeltramiDatum { mu, target: corr, target_side })
}

/// Mesh-level certificate: supremum of `|mu|`, total area of the support
/// `{faces with |mu| > 1e-12}`, and the quasiconformal constant
/// `K = (1+sup|mu|)/(1-sup|mu|)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DilatationCertificate {
    pub sup_abs_mu: f64,
    pub support_area: f64,
    pub quasiconformal_k: f64,
    pub per_face_abs_mu: Vec<f64>,
}

pub const MU_SUPPORT_THRESHOLD: f64 = 1e-12;

pub fn mesh_dilatation_certificate(
    mesh: &HalfEdgeMesh,
    targets: &[Option<BeltramiDatum>],
) -> Result<DilatationCertificate, DilatationError> {
    assert_eq!(targets.len(), mesh.face_count());
    let mut sup: f64 = 0.0;
    let mut area = 0.0;
    let mut per_face = Vec::with_capacity(targets.len());
    for f in 0..mesh.face_count() {
        let datum = targets[f].ok_or(DilatationError::MissingTarget(f))?;
        let m = datum.mu.abs();
        per_face.push(m);
        sup = sup.max(m);
        if m > MU_SUPPORT_THRESHOLD {
            area += mesh.face_area(f);
        }
    }
    Ok(DilatationCertificate {
        sup_abs_mu: sup,
        support_area: area,
        quasiconformal_k: (1.0 + sup) / (1.0 - sup),
        per_face_abs_mu: per_face,
    })
}

/// Result of the edge-wise gluing check.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GluingReport {
    pub pass: bool,
    pub max_relative_mismatch: f64,
    /// Interior edges whose two target-length assignments disagree, as
    /// vertex pairs.
    pub violations: Vec<(usize, usize)>,
}

pub const GLUING_REL_TOL: f64 = 1e-9;

/// For every interior edge, the target lengths assigned from the two sides
/// must agree (relative tolerance 1e-9). A face assigns its equilateral
/// target side to each of its edges unless a boundary-table override is
/// present for that half-edge (overrides come from annulus boundary
/// reparameterization).
pub fn gluing_check(
    mesh: &HalfEdgeMesh,
    targets: &[Option<BeltramiDatum>],
    overrides: &BTreeMap<usize, f64>,
) -> Result<GluingReport, DilatationError> {
    assert_eq!(targets.len(), mesh.face_count());
    let assigned = |h: usize| -> Result<f64, DilatationError> {
        if let Some(&v) = overrides.get(&h) {
            return Ok(v);
        }
        let f = h / 3;
        targets[f]
            .map(|d| d.target_side)
            .ok_or(DilatationError::MissingTarget(f))
    };
    let mut violations = Vec::new();
    let mut max_rel: f64 = 0.0;
    for h in 0..3 * mesh.face_count() {
        let t = mesh.twin(h);
        if t == NO_TWIN || t < h {
            continue;
        }
        let (a, b) = (assigned(h)?, assigned(t)?);
        let rel = (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
        max_rel = max_rel.max(rel);
        if rel > GLUING_REL_TOL {
            let (u, v) = mesh.he_endpoints(h);
            violations.push((u.min(v), u.max(v)));
        }
    }
    violations.sort_unstable();
    violations.dedup();
    Ok(GluingReport { pass: violations.is_empty(), max_relative_mismatch: max_rel, violations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::HalfEdgeMesh;

    fn equilateral() -> [[f64; 2]; 3] {
        [[0.0, 0.0], [1.0, 0.0], [0.5, 3f64.sqrt() / 2.0]]
    }

    #[test]
    fn equilateral_identity_mu_zero() {
        let d = affine_dilatation(equilateral(), Correspondence::IDENTITY, 1.0).unwrap();
        assert!(d.mu.abs() < 1e-15);
    }

    #[test]
    fn right_isosceles_anchor() {
        // apex a = i over edge [0,1]; independent evaluation of the same
        // quotient with bare complex arithmetic gives |mu| = 2 - sqrt(3)
        let src = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let d = affine_dilatation(src, Correspondence::IDENTITY, 1.0).unwrap();
        let expected = {
            // (b - a) / (b - conj a) with a = i, b = e^{i pi/3}
            let (br, bi) = (0.5, 3f64.sqrt() / 2.0);
            let num = (br, bi - 1.0);
            let den = (br, bi + 1.0);
            let d2 = den.0 * den.0 + den.1 * den.1;
            let re = (num.0 * den.0 + num.1 * den.1) / d2;
            let im = (num.1 * den.0 - num.0 * den.1) / d2;
            (re * re + im * im).sqrt()
        };
        assert!((expected - (2.0 - 3f64.sqrt())).abs() < 1e-12);
        assert!((d.mu.abs() - expected).abs() < 1e-14);
    }

    #[test]
    fn similarity_invariance() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let tri: [[f64; 2]; 3] = [
                [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
            ];
            let area = (tri[1][0] - tri[0][0]) * (tri[2][1] - tri[0][1])
                - (tri[1][1] - tri[0][1]) * (tri[2][0] - tri[0][0]);
            if area.abs() < 1e-3 {
                continue;
            }
            let (t, c) = if area > 0.0 {
                (tri, Correspondence::IDENTITY)
            } else {
                ([tri[0], tri[2], tri[1]], Correspondence::IDENTITY)
            };
            let m0 = affine_dilatation(t, c, 1.0).unwrap().mu.abs();
            // random similarity: rotate, scale, translate
            let ang: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let s: f64 = rng.gen_range(0.1..10.0);
            let (dx, dy) = (rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
            let mut t2 = t;
            for v in &mut t2 {
                let (x, y) = (v[0], v[1]);
                v[0] = s * (x * ang.cos() - y * ang.sin()) + dx;
                v[1] = s * (x * ang.sin() + y * ang.cos()) + dy;
            }
            let m1 = affine_dilatation(t2, c, 1.0).unwrap().mu.abs();
            assert!((m0 - m1).abs() < 1e-12, "{m0} vs {m1}");
        }
    }

    #[test]
    fn correspondence_cycling_preserves_abs() {
        let src = [[0.0, 0.0], [2.0, 0.1], [0.7, 1.3]];
        let m0 = affine_dilatation(src, Correspondence([0, 1, 2]), 1.0).unwrap();
        let m1 = affine_dilatation(src, Correspondence([1, 2, 0]), 1.0).unwrap();
        let m2 = affine_dilatation(src, Correspondence([2, 0, 1]), 1.0).unwrap();
        assert!((m0.mu.abs() - m1.mu.abs()).abs() < 1e-13);
        assert!((m0.mu.abs() - m2.mu.abs()).abs() < 1e-13);
    }

    #[test]
    fn reflected_correspondence_rejected() {
        let src = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        assert_eq!(
            affine_dilatation(src, Correspondence([1, 0, 2]), 1.0),
            Err(DilatationError::ReversedOrientation)
        );
        // negatively oriented source under an even correspondence
        let flipped = [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]];
        assert_eq!(
            affine_dilatation(flipped, Correspondence::IDENTITY, 1.0),
            Err(DilatationError::ReversedOrientation)
        );
    }

    #[test]
    fn certificate_all_equilateral() {
        let m = HalfEdgeMesh::build(
            vec![[0.0, 0.0], [1.0, 0.0], [0.5, 3f64.sqrt() / 2.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let t = vec![Some(
            affine_dilatation(m.face_points(0), Correspondence::IDENTITY, 1.0).unwrap(),
        )];
        let cert = mesh_dilatation_certificate(&m, &t).unwrap();
        assert!(cert.sup_abs_mu < 1e-14);
        assert_eq!(cert.support_area, 0.0);
        assert!((cert.quasiconformal_k - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gluing_pass_and_fault_injection() {
        let m = HalfEdgeMesh::build(
            vec![[0.0, 0.0], [1.0, 0.0], [0.5, 1.0], [0.5, -1.0]],
            vec![[0, 1, 2], [1, 0, 3]],
        )
        .unwrap();
        let datum = |side| BeltramiDatum {
            mu: Complex::new(0.0, 0.0),
            target: Correspondence::IDENTITY,
            target_side: side,
        };
        let good = vec![Some(datum(1.0)), Some(datum(1.0))];
        let rep = gluing_check(&m, &good, &BTreeMap::new()).unwrap();
        assert!(rep.pass);
        assert_eq!(rep.max_relative_mismatch, 0.0);

        let bad = vec![Some(datum(1.0)), Some(datum(2.0))];
        let rep = gluing_check(&m, &bad, &BTreeMap::new()).unwrap();
        assert!(!rep.pass);
        // the corrupted face has exactly one interior edge here
        assert_eq!(rep.violations.len(), 1);
        assert_eq!(rep.violations[0], (0, 1));
    }

    #[test]
    fn gluing_override_reconciles_seam() {
        let m = HalfEdgeMesh::build(
            vec![[0.0, 0.0], [1.0, 0.0], [0.5, 1.0], [0.5, -1.0]],
            vec![[0, 1, 2], [1, 0, 3]],
        )
        .unwrap();
        let datum = |side| BeltramiDatum {
            mu: Complex::new(0.0, 0.0),
            target: Correspondence::IDENTITY,
            target_side: side,
        };
        let t = vec![Some(datum(1.0)), Some(datum(2.0))];
        // override the seam half-edge of face 1 to match face 0
        let seam_h = (0..6)
            .find(|&h| h / 3 == 1 && m.twin(h) != crate::mesh::NO_TWIN)
            .unwrap();
        let mut over = BTreeMap::new();
        over.insert(seam_h, 1.0);
        let rep = gluing_check(&m, &t, &over).unwrap();
        assert!(rep.pass);
    }
}
