use proptest::prelude::*;
use ymlab::calculus::{curvature, ym_gradient};
use ymlab::flow::energy;
use ymlab::io::runner::{check_gradient, gradcheck_battery, GRADCHECK_TOL};
use ymlab::lattice::{build_torus, random_connection, ConnectionField, LatticeField, LatticeGeometry, TwistCocycle};
use ymlab::lie::{MatrixValue, ScalarKind};

fn torus(rank: usize, kind: ScalarKind) -> std::sync::Arc<ymlab::lattice::Torus> {
    let g = LatticeGeometry::cubic(3, 4, 0.25).unwrap();
    build_torus(g, TwistCocycle::untwisted(3, rank, kind)).unwrap()
}

/// The true gradient, shifted by one site along axis 0.
fn shifted_gradient(a: &ConnectionField) -> ConnectionField {
    let g = ym_gradient(a);
    let geo = a.torus().geometry();
    let n = geo.dim();
    let data: Vec<MatrixValue> = (0..geo.num_sites())
        .flat_map(|x| {
            let (y, _) = geo.step(x, 0, true);
            (0..n).map(move |mu| y * n + mu)
        })
        .map(|i| g.data()[i].clone())
        .collect();
    ConnectionField::from_data(a.torus(), data).unwrap()
}

#[test]
fn battery_passes_with_the_true_gradient() {
    let t = torus(2, ScalarKind::Complex);
    let r = gradcheck_battery(&t, None, 3, 4, &ym_gradient).unwrap();
    assert!(r.passed, "{}", r.max_rel_error);
}

#[test]
fn battery_fails_with_a_shifted_gradient() {
    let t = torus(2, ScalarKind::Complex);
    let r = gradcheck_battery(&t, None, 3, 4, &shifted_gradient).unwrap();
    assert!(!r.passed);
    assert!(r.max_rel_error > 100.0 * GRADCHECK_TOL);
}

#[test]
fn energy_is_quartic_along_lines() {
    // fourth differences of a quartic are constant, fifth vanish
    let t = torus(2, ScalarKind::Complex);
    let a = random_connection(&t, 0.8, 1);
    let b = random_connection(&t, 0.8, 2);
    let e: Vec<f64> = (0..6).map(|k| energy(&curvature(&a.add_scaled(0.3 * k as f64, &b)))).collect();
    let d5 = -e[0] + 5.0 * e[1] - 10.0 * e[2] + 10.0 * e[3] - 5.0 * e[4] + e[5];
    assert!(d5.abs() < 1e-10 * e.iter().fold(0.0f64, |m, v| m.max(v.abs())), "{d5}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn gradient_matches_directional_derivative(seed in 0u64..10_000, amp in 0.05f64..2.0, rank in 1usize..=3, real in any::<bool>()) {
        let kind = if real && rank > 1 { ScalarKind::Real } else { ScalarKind::Complex };
        let t = torus(rank, kind);
        let a = random_connection(&t, amp, seed);
        let b = random_connection(&t, 1.0, seed + 1);
        let c = check_gradient("prop", &a, &b, &ym_gradient);
        prop_assert!(c.rel_error < 1e-6, "rel {}", c.rel_error);
    }

    #[test]
    fn gradient_is_a_descent_direction(seed in 0u64..10_000) {
        let t = torus(2, ScalarKind::Complex);
        let a = random_connection(&t, 0.7, seed);
        let g = ym_gradient(&a);
        let e0 = energy(&curvature(&a));
        let e1 = energy(&curvature(&a.add_scaled(-1e-4, &g)));
        prop_assert!(e1 < e0);
    }
}
