//! Energy, Bianchi residual and a directional-derivative check of the
//! gradient on a random rank-2 connection over a 4^3 lattice.

use ymlab::calculus::{bianchi_residual, curvature, ym_gradient};
use ymlab::flow::energy;
use ymlab::io::runner::check_gradient;
use ymlab::lattice::{build_torus, random_connection, LatticeGeometry, TwistCocycle};
use ymlab::lie::ScalarKind;

fn main() -> ymlab::Result<()> {
    let g = LatticeGeometry::cubic(3, 4, 0.25)?;
    let torus = build_torus(g, TwistCocycle::untwisted(3, 2, ScalarKind::Complex))?;
    let a = random_connection(&torus, 1.0, 7);
    let f = curvature(&a);
    println!("energy {:.10}", energy(&f));
    println!("bianchi residual {:.3e}", bianchi_residual(&a, &f));
    for k in 0..4 {
        let b = random_connection(&torus, 1.0, 100 + k);
        let c = check_gradient("random", &a, &b, &ym_gradient);
        println!("dE {:+.12e}  2<G,B> {:+.12e}  rel {:.1e}", c.directional, c.predicted, c.rel_error);
    }
    Ok(())
}
