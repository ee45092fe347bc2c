//! Small random data on an untwisted T^3 flows to a flat connection.

use ymlab::flow::{run_flow, FlowConfig, FlowState, Scheme};
use ymlab::lattice::{build_torus, smooth_random_connection, LatticeGeometry, TwistCocycle};
use ymlab::lie::ScalarKind;
use ymlab::monitors::{gap_test, FlowMonitor, MonitorConfig};

fn main() -> ymlab::Result<()> {
    let g = LatticeGeometry::cubic(3, 8, 0.125)?;
    let torus = build_torus(g, TwistCocycle::untwisted(3, 2, ScalarKind::Complex))?;
    let a0 = smooth_random_connection(&torus, 0.003, 1, 6, 11)?;
    let cfg = FlowConfig {
        scheme: Scheme::Heun,
        t_end: 4.0,
        dt_max: 0.05,
        tolerance: 1e-7,
        gtol: 1e-10,
        ..FlowConfig::default()
    };
    let mcfg = MonitorConfig {
        radii: MonitorConfig::default_radii(torus.geometry(), 3),
        gtol: 1e-10,
        ..MonitorConfig::default()
    };
    let mut monitor = FlowMonitor::new(&torus, mcfg.clone())?;
    let mut state = FlowState::new(a0, cfg.dt_init);
    let summary = run_flow(&mut state, &cfg, &mut monitor)?;
    println!(
        "{}: t = {:.3}, energy {:.3e} -> {:.3e}, steps {}",
        summary.outcome.label(),
        summary.t,
        summary.initial_energy,
        summary.final_energy,
        summary.stats.accepted
    );
    println!("verdict {}", gap_test(&state.a, &mcfg).verdict.label());
    Ok(())
}
