use qcmesh_core::annulus::*;
fn main() {
    let delta_true = 0.04;
    let n = 2700;
    let marks = |r: f64| -> Vec<[f64; 2]> {
        (0..n).map(|k| {
            let t = k as f64 / n as f64 * std::f64::consts::TAU;
            [r * t.cos(), r * t.sin()]
        }).collect()
    };
    let a = ConformalGridAnnulus {
        outer: Ring::Circle { center: [0.0, 0.0], radius: 1.0 + delta_true },
        inner: Ring::Circle { center: [0.0, 0.0], radius: 1.0 },
        outer_marks: marks(1.0 + delta_true),
        inner_marks: marks(1.0),
    };
    let h = (delta_true / 12.0).min(std::f64::consts::TAU / n as f64 / 2.5);
    let m = discrete_conformal_annulus(&a, h).unwrap();
    let gate = HypothesisGate { delta_max: 0.05, arc_over_delta_max: 0.1 };
    match annulus_triangulate(&a, &m, gate, 1.0, 1.0, 1.0) {
        Ok(mesh) => {
            println!("ok: {} faces", mesh.faces.len());
            let mut supmu: f64 = 0.0;
            for d in mesh.mu.iter().flatten() {
                supmu = supmu.max(((d.mu.re).powi(2) + (d.mu.im).powi(2)).sqrt());
            }
            println!("sup|mu| = {supmu}");
        }
        Err(e) => println!("error: {e}"),
    }
}
