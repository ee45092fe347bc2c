//! A U(1) connection of degree 1 on T^2 relaxes to constant curvature, with
//! energy 4 pi^2 on the unit torus.

use ymlab::flow::{run_flow, FlowConfig, FlowState, NoObserver, Scheme};
use ymlab::lattice::{build_torus, constant_curvature_connection, smooth_random_connection, LatticeGeometry, TwistCocycle};

fn main() -> ymlab::Result<()> {
    let g = LatticeGeometry::cubic(2, 16, 1.0 / 16.0)?;
    let torus = build_torus(g, TwistCocycle::abelian(2, 1, &[(0, 1, 1)]))?;
    let a0 = constant_curvature_connection(&torus)?.add_scaled(1.0, &smooth_random_connection(&torus, 0.3, 2, 6, 5)?);
    let cfg = FlowConfig {
        scheme: Scheme::Rk4,
        t_end: 3.0,
        tolerance: 1e-8,
        gtol: 1e-10,
        ..FlowConfig::default()
    };
    let mut state = FlowState::new(a0, cfg.dt_init);
    let s = run_flow(&mut state, &cfg, &mut NoObserver)?;
    println!("{} at t = {:.3}", s.outcome.label(), s.t);
    println!("energy {:.10}  (4 pi^2 = {:.10})", s.final_energy, 4.0 * std::f64::consts::PI.powi(2));
    println!("energy identity: E0 - E1 = {:.6e}, dissipation = {:.6e}", s.initial_energy - s.final_energy, state.dissipation);
    Ok(())
}
