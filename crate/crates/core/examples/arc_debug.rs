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
    let gap = std::f64::consts::TAU / n as f64;
    // inner mark angle errors vs truth
    let mut max_in_err: f64 = 0.0;
    for (pos, &orig) in m.inner_order.iter().enumerate() {
        let want = orig as f64 * gap;
        let got = m.inner_angles[pos];
        let mut d = got - want; 
        while d > std::f64::consts::PI { d -= std::f64::consts::TAU; }
        while d < -std::f64::consts::PI { d += std::f64::consts::TAU; }
        max_in_err = max_in_err.max(d.abs());
    }
    let mut max_out_err: f64 = 0.0;
    for (pos, &orig) in m.outer_order.iter().enumerate() {
        let want = orig as f64 * gap;
        let got = m.outer_angles[pos];
        let mut d = got - want;
        while d > std::f64::consts::PI { d -= std::f64::consts::TAU; }
        while d < -std::f64::consts::PI { d += std::f64::consts::TAU; }
        max_out_err = max_out_err.max(d.abs());
    }
    println!("h={h:.6} gap={gap:.6} max inner err={max_in_err:.6} ({:.2} gaps), max outer err={max_out_err:.6} ({:.2} gaps)",
             max_in_err/gap, max_out_err/gap);
}
