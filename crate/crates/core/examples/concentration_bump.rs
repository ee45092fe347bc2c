//! Concentration profile of a five-dimensional bump, before and after a
//! short stretch of flow.

use ymlab::calculus::curvature;
use ymlab::flow::{energy, run_flow, FlowConfig, FlowState, NoObserver};
use ymlab::lattice::{build_torus, concentrated_bump_connection, BumpSpec, LatticeGeometry, TwistCocycle};
use ymlab::lie::ScalarKind;
use ymlab::monitors::{concentration_profile, sup_curvature};

fn main() -> ymlab::Result<()> {
    let side = 6;
    let len = 2e-5;
    let g = LatticeGeometry::cubic(5, side, len / side as f64)?;
    let torus = build_torus(g, TwistCocycle::untwisted(5, 2, ScalarKind::Complex))?;
    let spec = BumpSpec {
        scale: len / 4.0,
        center: vec![len / 2.0; 5],
        strength: 1.0,
        seed: 2,
    };
    let a = concentrated_bump_connection(&torus, &spec)?;
    let radii: Vec<f64> = (1..=3).map(|k| k as f64 * torus.geometry().spacing()).collect();
    let report = |a: &ymlab::lattice::ConnectionField| -> ymlab::Result<()> {
        let f = curvature(a);
        println!("energy {:.4e}  sup|F| {:.4e}", energy(&f), sup_curvature(&f));
        for (r, v) in concentration_profile(&f, &radii)? {
            println!("  r = {r:.2e}: {v:.4}");
        }
        Ok(())
    };
    report(&a)?;
    let a2 = torus.geometry().spacing().powi(2);
    let cfg = FlowConfig {
        t_end: 5.0 * a2,
        dt_init: 1e-3 * a2,
        dt_min: 1e-9 * a2,
        dt_max: 0.1 * a2,
        tolerance: 1e-3,
        ..FlowConfig::default()
    };
    let mut state = FlowState::new(a, cfg.dt_init);
    let s = run_flow(&mut state, &cfg, &mut NoObserver)?;
    println!("{} after {} steps", s.outcome.label(), s.stats.accepted);
    report(&state.a)
}
