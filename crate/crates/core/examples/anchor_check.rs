use qcmesh_core::modulus::*;
fn main() {
    let target = std::f64::consts::TAU / 2f64.ln();
    for h in [1.0/64.0, 1.0/128.0, 1.0/256.0] {
        let m = discrete_modulus(&annulus_connect(1.0, 2.0, h)).unwrap();
        println!("h=1/{:.0}: m={:.5} target={:.5} rel={:.4}%", 1.0/h, m, target, (m-target).abs()/target*100.0);
    }
}
