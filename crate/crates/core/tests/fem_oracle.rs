use sgns_core::fem::{Assembler, Geometry, Mesh};
use sgns_core::geometry::Rect;
use sgns_core::sparse;

fn strip(h: f64) -> Assembler {
    Assembler::new(Mesh::build(Geometry::strip(Rect::new(0.0, 2.0, -1.0, 1.0).unwrap()), h).unwrap())
}

fn nodal(a: &Assembler, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.mesh().nodes.iter().map(|&[x, y]| f(x, y)).collect()
}

#[test]
fn gradient_energy_of_biquadratic_field() {
    // w = x^2 + xy - y^2 on [0,2] x [-1,1]: |grad w|^2 = 5x^2 + 5y^2, integral 100/3.
    for h in [2.0, 1.0, 0.5] {
        let a = strip(h);
        let w = nodal(&a, |x, y| x * x + x * y - y * y);
        let e = a.gradient_norm_sq(&w);
        assert!((e - 100.0 / 3.0).abs() < 1e-12, "h = {h}: {e}");
    }
}

#[test]
fn divergence_integrates_against_constant_pressure() {
    for h in [2.0, 0.5] {
        let a = strip(h);
        let m = a.mesh();
        let (bx, by) = a.divergence();
        let split = |w: &[f64]| -> (Vec<f64>, Vec<f64>) { (m.free.iter().map(|&n| w[n]).collect(), m.fixed.iter().map(|&n| w[n]).collect()) };
        let total = |ux: &[f64], uy: &[f64]| -> f64 {
            let (xi, xb) = split(ux);
            let (yi, yb) = split(uy);
            bx.apply(&xi, &xb).iter().zip(by.apply(&yi, &yb)).map(|(a, b)| a + b).sum()
        };
        // Pressure basis functions sum to one, so the row sum is the integral of div u.
        let free_div = total(&nodal(&a, |x, _| x), &nodal(&a, |_, y| -y));
        assert!(free_div.abs() < 1e-12, "h = {h}: {free_div}");
        let d = total(&nodal(&a, |x, _| x * x), &nodal(&a, |_, _| 0.0));
        assert!((d.abs() - 8.0).abs() < 1e-12, "h = {h}: {d}");
        let d = total(&nodal(&a, |_, _| 0.0), &nodal(&a, |x, y| x * y));
        assert!((d.abs() - 4.0).abs() < 1e-12, "h = {h}: {d}");
    }
}

#[test]
fn mass_matrix_reproduces_area_and_moments() {
    let a = strip(0.5);
    let mp = a.pressure_mass();
    let ones = vec![1.0; a.mesh().pnodes.len()];
    let x: Vec<f64> = a.mesh().pnodes.iter().map(|p| p[0]).collect();
    let mul = |v: &[f64]| sparse::mul_vec(&mp, v);
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
    assert!((dot(&ones, &mul(&ones)) - 4.0).abs() < 1e-12);
    // Integral of x^2 over the strip is 16/3.
    assert!((dot(&x, &mul(&x)) - 16.0 / 3.0).abs() < 1e-12);
}
