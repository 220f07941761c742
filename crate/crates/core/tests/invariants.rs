use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use pflow::portrait::{emit_portrait, PortraitData};
use pflow::scenario::{parse_scenario, presets};
use pflow::spectral::{matrix_exponential, spectral_decompose, LiftedGram};
use pflow::sphere::{chart_to_sphere, sphere_to_chart, FlowOptions, PoincareSphere, SpherePoint};
use pflow::system::{flow, lifted_flow, ControlRange, ControlSignal, LinearSystem};

fn matrix(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-2.0..2.0f64, n * n).prop_map(move |v| DMatrix::from_row_slice(n, n, &v))
}

fn system(n: usize) -> impl Strategy<Value = LinearSystem> {
    (matrix(n), prop::collection::vec(-1.0..1.0f64, n)).prop_map(move |(a, b)| {
        LinearSystem::new(a, DMatrix::from_column_slice(n, 1, &b), ControlRange::symmetric_box(1, 1.0)).unwrap()
    })
}

fn point(n: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-3.0..3.0f64, n).prop_map(DVector::from_vec)
}

fn control() -> impl Strategy<Value = ControlSignal> {
    prop::collection::vec(-1.0..1.0f64, 1..4).prop_map(|vals| {
        let breakpoints = (1..vals.len()).map(|k| 0.7 * k as f64).collect();
        ControlSignal::piecewise(breakpoints, vals.into_iter().map(|v| vec![v]).collect()).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exponential_is_a_group(a in matrix(3), s in -1.0..1.0f64, t in -1.0..1.0f64) {
        let lhs = matrix_exponential(&a, s + t).unwrap();
        let rhs = matrix_exponential(&a, s).unwrap() * matrix_exponential(&a, t).unwrap();
        prop_assert!((&lhs - &rhs).amax() <= 1e-10 * lhs.amax().max(1.0));
    }

    #[test]
    fn chart_round_trip(x in point(3)) {
        let s = chart_to_sphere(&LiftedGram::identity(3), &x).unwrap();
        prop_assert!((s.coords().norm() - 1.0).abs() < 1e-14);
        prop_assert!(s.last() > 0.0);
        let back = sphere_to_chart(&s).unwrap();
        prop_assert!((&back - &x).amax() <= 1e-12 * x.amax().max(1.0));
    }

    // the sphere flow is the chart flow seen through φ⁺
    #[test]
    fn sphere_flow_conjugates_chart_flow(sys in system(2), x in point(2), u in control(), t in 0.0..3.0f64) {
        let sp = PoincareSphere::new(sys.clone());
        let s0 = chart_to_sphere(sp.gram(), &x).unwrap();
        let st = sp.flow(t, &s0, &u, &FlowOptions::default()).unwrap();
        let xt = flow(&sys, t, &x, &u).unwrap();
        let want = chart_to_sphere(sp.gram(), &xt).unwrap();
        prop_assert!((st.coords() - want.coords()).amax() < 1e-10);
    }

    #[test]
    fn equator_is_invariant(sys in system(3), x in point(3), u in control(), t in -2.0..2.0f64) {
        prop_assume!(x.norm() > 1e-3);
        let sp = PoincareSphere::new(sys);
        let s0 = SpherePoint::on_equator(&x, sp.gram()).unwrap();
        let st = sp.flow(t, &s0, &u, &FlowOptions::default()).unwrap();
        prop_assert_eq!(st.last(), 0.0);
        prop_assert!((st.coords().norm() - 1.0).abs() < 1e-12);
    }

    // φ¹(t, x, r, u) with r = 0 ignores the control
    #[test]
    fn zero_lift_is_uncontrolled(sys in system(3), x in point(3), u in control(), t in 0.0..2.0f64) {
        let y = lifted_flow(&sys, t, &x, 0.0, &u).unwrap();
        let want = matrix_exponential(sys.a(), t).unwrap() * &x;
        prop_assert!((&y.x - &want).amax() <= 1e-10 * want.amax().max(1.0));
        prop_assert_eq!(y.r, 0.0);
    }

    #[test]
    fn lyapunov_dimensions_add_up(a in matrix(4)) {
        let sd = spectral_decompose(&a, 1e-6).unwrap();
        let total: usize = sd.spaces.iter().map(|s| s.ncols()).sum();
        prop_assert_eq!(total, 4);
        prop_assert!(sd.check_invariants(&a).is_ok());
    }
}

#[test]
fn portraits_are_deterministic() {
    let data = PortraitData {
        title: "t".into(),
        dim: 2,
        trajectories: vec![vec![DVector::from_vec(vec![0.0, 0.0]), DVector::from_vec(vec![1.0, 0.5])]],
        equilibria: vec![DVector::from_vec(vec![1.0, 0.5])],
        sets: vec![],
        sphere: false,
    };
    assert_eq!(emit_portrait(&data, None).unwrap(), emit_portrait(&data, None).unwrap());
}

#[test]
fn presets_survive_a_json_round_trip() {
    for name in presets::names() {
        let sc = presets::get(name).unwrap();
        let again = parse_scenario(&sc.to_json()).unwrap();
        assert_eq!(sc, again);
    }
}
