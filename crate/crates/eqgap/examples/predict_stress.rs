//! Tabulate energy and stress of a model along simple deformation paths.
//!
//! Uses an analytic Neo-Hookean model to show the stress interface: the
//! undeformed state must give exactly zero energy and stress, uniaxial
//! stretch stiffens, and simple shear produces the expected off-diagonal
//! stress pattern.

use eqgap::kinematics::KinematicMode;
use eqgap::material::Model;
use nalgebra::Matrix2;

fn main() -> eqgap::Result<()> {
    let model = Model::neo_hookean(KinematicMode::PlaneStrain, 0.4, 4.0)?;
    let prepared = model.prepare();

    println!("uniaxial stretch F = diag(s, 1):");
    println!("      s          W [MPa]        P11 [MPa]      P22 [MPa]");
    for k in 0..=8 {
        let s = 1.0 + 0.05 * k as f64;
        let f = Matrix2::new(s, 0.0, 0.0, 1.0);
        let w = prepared.energy(&f);
        let p = prepared.stress(&f);
        println!(
            "  {s:5.2}  {w:15.6e}  {:14.6e}  {:14.6e}",
            p[(0, 0)],
            p[(1, 1)]
        );
    }

    println!("\nsimple shear F = I + g e1 (x) e2:");
    println!("      g          W [MPa]        P12 [MPa]      P21 [MPa]");
    for k in 0..=8 {
        let g = 0.05 * k as f64;
        let f = Matrix2::new(1.0, g, 0.0, 1.0);
        let w = prepared.energy(&f);
        let p = prepared.stress(&f);
        println!(
            "  {g:5.2}  {w:15.6e}  {:14.6e}  {:14.6e}",
            p[(0, 1)],
            p[(1, 0)]
        );
    }

    let identity = Matrix2::identity();
    assert_eq!(prepared.energy(&identity), 0.0);
    assert_eq!(prepared.stress(&identity), Matrix2::zeros());
    println!("\nundeformed state: W = 0, P = 0 exactly");
    Ok(())
}
