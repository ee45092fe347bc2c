//! Builds a clock-shift twisted torus and checks that the constant-curvature
//! connection carries the prescribed Chern number.

use ymlab::calculus::{chern_integral, curvature};
use ymlab::lattice::{build_torus, constant_curvature_connection, LatticeGeometry, TwistCocycle};
use ymlab::monitors::tracefree_norms;

fn main() -> ymlab::Result<()> {
    let g = LatticeGeometry::cubic(2, 12, 1.0 / 12.0)?;
    let twist = TwistCocycle::clock_shift(2, 2, &[(0, 1, 1)])?;
    for mu in 0..2 {
        println!("transition {mu}: {:?}", twist.transition(mu).value().as_slice());
    }
    let torus = build_torus(g, twist)?;
    let a = constant_curvature_connection(&torus)?;
    let f = curvature(&a);
    println!("chern integral (0,1): {:.12}", chern_integral(&f, 0, 1)?);
    let (tf, _) = tracefree_norms(&f);
    println!("trace-free curvature L2: {tf:.3e}");
    Ok(())
}
