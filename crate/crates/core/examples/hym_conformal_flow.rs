//! Hermitian-Yang-Mills flow of a rank-2 metric on the complex torus after
//! conformal normalisation.

use ymlab::hym::{
    conformal_normalize, hym_record, run_hym, ComplexTorusGeometry, HermitianMetricField, HolomorphicStructure, HymConfig,
    HymState,
};
use ymlab::lattice::{build_torus, LatticeGeometry, TwistCocycle};
use ymlab::lie::ScalarKind;

fn main() -> ymlab::Result<()> {
    let g = LatticeGeometry::cubic(2, 16, 1.0 / 16.0)?;
    let torus = build_torus(g, TwistCocycle::untwisted(2, 2, ScalarKind::Complex))?;
    let geom = ComplexTorusGeometry::new(&torus)?;
    let hol = HolomorphicStructure::trivial(&geom)?;
    let k0 = HermitianMetricField::random_smooth(&torus, 0.5, 2, 3)?;
    let (h0, _) = conformal_normalize(&k0, &hol)?;
    let cfg = HymConfig {
        t_end: 0.25,
        cadence: 50,
        ..HymConfig::default()
    };
    let first = hym_record(&HymState::new(h0.clone(), cfg.dt_init), &h0, &hol)?;
    println!("t = 0: |F_perp| {:.6e}, balance {:.3e}", first.tracefree_l2, first.balance_inf);
    let mut state = HymState::new(h0.clone(), cfg.dt_init);
    let outcome = run_hym(&mut state, &h0, &hol, &cfg, &mut |s, r| {
        println!(
            "t = {:.4}: |F_perp| {:.6e}  det drift {:.1e}  trace residual {:.1e}",
            s.t, r.tracefree_l2, r.det_h_drift, r.trace_identity_residual
        );
        Ok(())
    })?;
    println!("{outcome:?}");
    Ok(())
}
