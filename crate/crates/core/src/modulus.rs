//! Discrete conformal modulus of path families on raster grid domains via
//! the resistor-network equivalence: the modulus of the family connecting
//! two boundary sets equals the effective conductance of the unit-resistor
//! grid between them, and separating families are handled by reciprocal
//! duality.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModulusError {
    #[error("domain has no cells")]
    EmptyDomain,
    #[error("terminal set {0} is empty")]
    EmptyTerminal(&'static str),
    #[error("conjugate-gradient solver did not reach tolerance {tol} in {iters} iterations (residual {residual})")]
    NoConvergence { tol: f64, iters: usize, residual: f64 },
    #[error("terminals are not connected through the domain")]
    Disconnected,
}

/// Raster domain: cells of size `h` on `[x0, x0 + nx*h] x [y0, y0 + ny*h]`,
/// with an inclusion mask.
#[derive(Clone, Debug)]
pub struct GridDomain {
    pub h: f64,
    pub nx: usize,
    pub ny: usize,
    pub x0: f64,
    pub y0: f64,
    pub inside: Vec<bool>,
}

impl GridDomain {
    pub fn from_predicate(
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
        h: f64,
        mut pred: impl FnMut(f64, f64) -> bool,
    ) -> Self {
        let nx = ((x1 - x0) / h).round() as usize;
        let ny = ((y1 - y0) / h).round() as usize;
        let mut inside = vec![false; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                let cx = x0 + (i as f64 + 0.5) * h;
                let cy = y0 + (j as f64 + 0.5) * h;
                inside[j * nx + i] = pred(cx, cy);
            }
        }
        Self { h, nx, ny, x0, y0, inside }
    }

    pub fn rect(w: f64, hgt: f64, h: f64) -> Self {
        Self::from_predicate(0.0, 0.0, w, hgt, h, |_, _| true)
    }

    pub fn annulus(r_inner: f64, r_outer: f64, h: f64) -> Self {
        Self::from_predicate(-r_outer, -r_outer, r_outer, r_outer, h, |x, y| {
            let r = x.hypot(y);
            r > r_inner && r < r_outer
        })
    }

    pub fn cell_center(&self, idx: usize) -> (f64, f64) {
        let (i, j) = (idx % self.nx, idx / self.nx);
        (self.x0 + (i as f64 + 0.5) * self.h, self.y0 + (j as f64 + 0.5) * self.h)
    }

    pub fn cells_where(&self, mut pred: impl FnMut(f64, f64) -> bool) -> Vec<usize> {
        (0..self.inside.len())
            .filter(|&i| self.inside[i])
            .filter(|&i| {
                let (x, y) = self.cell_center(i);
                pred(x, y)
            })
            .collect()
    }

    fn neighbors(&self, idx: usize) -> [Option<usize>; 4] {
        let (i, j) = (idx % self.nx, idx / self.nx);
        let mut out = [None; 4];
        if i > 0 && self.inside[idx - 1] {
            out[0] = Some(idx - 1);
        }
        if i + 1 < self.nx && self.inside[idx + 1] {
            out[1] = Some(idx + 1);
        }
        if j > 0 && self.inside[idx - self.nx] {
            out[2] = Some(idx - self.nx);
        }
        if j + 1 < self.ny && self.inside[idx + self.nx] {
            out[3] = Some(idx + self.nx);
        }
        out
    }
}

/// Path family on a grid domain: curves connecting `e` to `f`, or closed
/// curves separating them.
#[derive(Clone, Debug)]
pub enum Family {
    Connect { e: Vec<usize>, f: Vec<usize> },
    Separate { e: Vec<usize>, f: Vec<usize> },
}

#[derive(Clone, Debug)]
pub struct PathFamilySpec {
    pub domain: GridDomain,
    pub family: Family,
}

pub const SOLVER_TOL: f64 = 1e-8;

/// Discrete modulus. Connecting families map to the effective conductance of
/// the unit-resistor grid (degenerate touching terminals give infinity);
/// separating families are the reciprocal.
pub fn discrete_modulus(spec: &PathFamilySpec) -> Result<f64, ModulusError> {
    match &spec.family {
        Family::Connect { e, f } => effective_conductance(&spec.domain, e, f),
        Family::Separate { e, f } => Ok(1.0 / effective_conductance(&spec.domain, e, f)?),
    }
}

fn effective_conductance(dom: &GridDomain, e: &[usize], f: &[usize]) -> Result<f64, ModulusError> {
    if dom.inside.iter().all(|&b| !b) {
        return Err(ModulusError::EmptyDomain);
    }
    if e.is_empty() {
        return Err(ModulusError::EmptyTerminal("E"));
    }
    if f.is_empty() {
        return Err(ModulusError::EmptyTerminal("F"));
    }
    let n = dom.inside.len();
    let mut fixed: Vec<Option<f64>> = vec![None; n];
    for &c in e {
        fixed[c] = Some(1.0);
    }
    for &c in f {
        if fixed[c] == Some(1.0) {
            return Ok(f64::INFINITY); // terminals overlap
        }
        fixed[c] = Some(0.0);
    }
    for &c in e {
        for nb in dom.neighbors(c).into_iter().flatten() {
            if fixed[nb] == Some(0.0) {
                return Ok(f64::INFINITY); // terminals touch
            }
        }
    }

    let mut id = vec![usize::MAX; n];
    let mut cells = Vec::new();
    for c in 0..n {
        if dom.inside[c] && fixed[c].is_none() {
            id[c] = cells.len();
            cells.push(c);
        }
    }
    let m = cells.len();
    let mut diag = vec![0.0f64; m];
    let mut rhs = vec![0.0f64; m];
    for (u, &c) in cells.iter().enumerate() {
        for nb in dom.neighbors(c).into_iter().flatten() {
            diag[u] += 1.0;
            if let Some(v) = fixed[nb] {
                rhs[u] += v;
            }
        }
    }
    let apply = |x: &[f64], out: &mut [f64]| {
        for (u, &c) in cells.iter().enumerate() {
            let mut acc = diag[u] * x[u];
            for nb in dom.neighbors(c).into_iter().flatten() {
                if id[nb] != usize::MAX {
                    acc -= x[id[nb]];
                }
            }
            out[u] = acc;
        }
    };

    let x = conjugate_gradient(apply, &rhs, &diag, SOLVER_TOL)?;

    let mut u = vec![0.0f64; n];
    for c in 0..n {
        if let Some(v) = fixed[c] {
            u[c] = v;
        } else if id[c] != usize::MAX {
            u[c] = x[id[c]];
        }
    }
    // conductance = dissipated energy at unit potential difference
    let mut energy = 0.0;
    for c in 0..n {
        if !dom.inside[c] {
            continue;
        }
        let (i, j) = (c % dom.nx, c / dom.nx);
        if i + 1 < dom.nx && dom.inside[c + 1] {
            energy += (u[c] - u[c + 1]).powi(2);
        }
        if j + 1 < dom.ny && dom.inside[c + dom.nx] {
            energy += (u[c] - u[c + dom.nx]).powi(2);
        }
    }
    if energy <= 0.0 {
        return Err(ModulusError::Disconnected);
    }
    Ok(energy)
}

pub(crate) fn conjugate_gradient(
    apply: impl Fn(&[f64], &mut [f64]),
    rhs: &[f64],
    diag: &[f64],
    tol: f64,
) -> Result<Vec<f64>, ModulusError> {
    let m = rhs.len();
    if m == 0 {
        return Ok(Vec::new());
    }
    let mut x = vec![0.0f64; m];
    let mut r = rhs.to_vec();
    let precond = |r: &[f64], z: &mut [f64]| {
        for i in 0..r.len() {
            z[i] = if diag[i] > 0.0 { r[i] / diag[i] } else { 0.0 };
        }
    };
    let mut z = vec![0.0f64; m];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let rhs_norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let mut ap = vec![0.0f64; m];
    let max_iters = 40 * (m as f64).sqrt() as usize + 2000;
    for _ in 0..max_iters {
        let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rnorm <= tol * rhs_norm {
            return Ok(x);
        }
        apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        for i in 0..m {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        precond(&r, &mut z);
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..m {
            p[i] = z[i] + beta * p[i];
        }
    }
    let residual = r.iter().map(|v| v * v).sum::<f64>().sqrt() / rhs_norm;
    if residual <= tol * 100.0 {
        return Ok(x);
    }
    Err(ModulusError::NoConvergence { tol, iters: max_iters, residual })
}

/// Assert the extension rule: when every curve of `superfamily` contains a
/// curve of `base`, the superfamily's modulus cannot exceed the base's.
pub fn extension_rule_check(
    base: &PathFamilySpec,
    superfamily: &PathFamilySpec,
    tol: f64,
) -> Result<bool, ModulusError> {
    let mb = discrete_modulus(base)?;
    let ms = discrete_modulus(superfamily)?;
    Ok(ms <= mb + tol)
}

/// Connect family across a `w x hgt` rectangle between its vertical sides.
pub fn rect_connect(w: f64, hgt: f64, h: f64) -> PathFamilySpec {
    let dom = GridDomain::rect(w, hgt, h);
    let e = dom.cells_where(|x, _| x < h);
    let f = dom.cells_where(|x, _| x > w - h);
    PathFamilySpec { domain: dom, family: Family::Connect { e, f } }
}

/// Connect family between the two boundary circles of a round annulus.
pub fn annulus_connect(r_inner: f64, r_outer: f64, h: f64) -> PathFamilySpec {
    let dom = GridDomain::annulus(r_inner, r_outer, h);
    let e = dom.cells_where(|x, y| x.hypot(y) < r_inner + 1.5 * h);
    let f = dom.cells_where(|x, y| x.hypot(y) > r_outer - 1.5 * h);
    PathFamilySpec { domain: dom, family: Family::Connect { e, f } }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_is_one() {
        let spec = rect_connect(1.0, 1.0, 1.0 / 128.0);
        let m = discrete_modulus(&spec).unwrap();
        assert!((m - 1.0).abs() < 0.01, "unit square modulus {m}");
    }

    #[test]
    fn two_one_rect_is_half() {
        let spec = rect_connect(2.0, 1.0, 1.0 / 128.0);
        let m = discrete_modulus(&spec).unwrap();
        assert!((m - 0.5).abs() < 0.005, "2x1 rectangle modulus {m}");
    }

    #[test]
    fn annulus_anchor_coarse() {
        // coarse smoke test; the acceptance suite runs h = 1/256
        let spec = annulus_connect(1.0, 2.0, 1.0 / 64.0);
        let m = discrete_modulus(&spec).unwrap();
        let target = std::f64::consts::TAU / 2f64.ln();
        assert!((m - target).abs() / target < 0.05, "annulus modulus {m} vs {target}");
    }

    #[test]
    fn separate_family_reciprocal() {
        let dom = GridDomain::rect(2.0, 1.0, 1.0 / 64.0);
        let e = dom.cells_where(|x, _| x < 1.0 / 64.0);
        let f = dom.cells_where(|x, _| x > 2.0 - 1.0 / 64.0);
        let connect = PathFamilySpec {
            domain: dom.clone(),
            family: Family::Connect { e: e.clone(), f: f.clone() },
        };
        let separate = PathFamilySpec { domain: dom, family: Family::Separate { e, f } };
        let mc = discrete_modulus(&connect).unwrap();
        let ms = discrete_modulus(&separate).unwrap();
        assert!((mc * ms - 1.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_terminals_flag_infinity() {
        let dom = GridDomain::rect(1.0, 1.0, 0.25);
        let e = dom.cells_where(|x, _| x < 0.5);
        let f = dom.cells_where(|x, _| x >= 0.5);
        let spec = PathFamilySpec { domain: dom, family: Family::Connect { e, f } };
        assert_eq!(discrete_modulus(&spec).unwrap(), f64::INFINITY);
    }

    #[test]
    fn extension_rule_nested_rectangles() {
        // every left-right curve of the 4x1 rectangle crosses the middle 2x1
        // block, so its family has the smaller modulus (1/4 <= 1/2)
        let h = 1.0 / 64.0;
        let base = rect_connect(2.0, 1.0, h);
        let sup = rect_connect(4.0, 1.0, h);
        assert!(extension_rule_check(&base, &sup, 1e-9).unwrap());
        let mb = discrete_modulus(&base).unwrap();
        let ms = discrete_modulus(&sup).unwrap();
        assert!((mb - 0.5).abs() < 0.005);
        assert!((ms - 0.25).abs() < 0.005);
    }

    #[test]
    fn extension_rule_equal_families() {
        let h = 1.0 / 32.0;
        let a = rect_connect(1.0, 1.0, h);
        let b = rect_connect(1.0, 1.0, h);
        assert_eq!(discrete_modulus(&a).unwrap(), discrete_modulus(&b).unwrap());
        assert!(extension_rule_check(&a, &b, 1e-12).unwrap());
    }

    #[test]
    fn extension_rule_annulus_crossing() {
        // curves from a small disk to the far field cross the annulus
        // 1 < |z| < 2, so their modulus is bounded by the annulus modulus
        let h = 1.0 / 64.0;
        let annulus = annulus_connect(1.0, 2.0, h);
        let dom = GridDomain::from_predicate(-3.0, -3.0, 3.0, 3.0, h, |x, y| {
            let r = x.hypot(y);
            r > 0.5 && r < 3.0
        });
        let e = dom.cells_where(|x, y| x.hypot(y) < 0.5 + 1.5 * h);
        let f = dom.cells_where(|x, y| x.hypot(y) > 3.0 - 1.5 * h);
        let through = PathFamilySpec { domain: dom, family: Family::Connect { e, f } };
        assert!(extension_rule_check(&annulus, &through, 1e-9).unwrap());
    }

    #[test]
    fn monotone_in_domain_enlargement() {
        let h = 1.0 / 64.0;
        let narrow = rect_connect(2.0, 0.5, h);
        let wide = rect_connect(2.0, 1.0, h);
        let mn = discrete_modulus(&narrow).unwrap();
        let mw = discrete_modulus(&wide).unwrap();
        assert!(mw >= mn - 1e-9);
    }

    #[test]
    fn refinement_differences_shrink() {
        let m1 = discrete_modulus(&rect_connect(2.0, 1.0, 1.0 / 16.0)).unwrap();
        let m2 = discrete_modulus(&rect_connect(2.0, 1.0, 1.0 / 32.0)).unwrap();
        let m3 = discrete_modulus(&rect_connect(2.0, 1.0, 1.0 / 64.0)).unwrap();
        assert!((m2 - m3).abs() <= (m1 - m2).abs() + 1e-12);
    }

    #[test]
    fn conformal_quasi_invariance_square_map() {
        // sector 1<|z|<2, 0<arg<pi/2 maps under z^2 to 1<|z|<4, 0<arg<pi;
        // the radial connect modulus is conformally invariant
        let h = 1.0 / 96.0;
        let sector = |r0: f64, r1: f64, a: f64, h: f64| {
            let dom = GridDomain::from_predicate(-r1, -0.05 * r1, r1, r1, h, |x, y| {
                let r = x.hypot(y);
                let t = y.atan2(x);
                r > r0 && r < r1 && t > 0.0 && t < a
            });
            let e = dom.cells_where(|x, y| x.hypot(y) < r0 + 1.5 * h);
            let f = dom.cells_where(|x, y| x.hypot(y) > r1 - 1.5 * h);
            PathFamilySpec { domain: dom, family: Family::Connect { e, f } }
        };
        let m1 = discrete_modulus(&sector(1.0, 2.0, std::f64::consts::FRAC_PI_2, h)).unwrap();
        let m2 = discrete_modulus(&sector(1.0, 4.0, std::f64::consts::PI, 2.0 * h)).unwrap();
        assert!((m1 - m2).abs() / m1 < 0.02, "sector moduli differ: {m1} vs {m2}");
    }
}
