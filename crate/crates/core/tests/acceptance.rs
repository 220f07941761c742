//! One line per acceptance criterion, then the verdict.
//!
//! Criterion 2 is reported but not asserted: on the Jordan block of
//! Example 3 the finite-time exponents at T = 50 carry an O(ln T / T) bias
//! that exceeds the 0.05 tolerance (see `jordan_bias_explains_criterion_2`).

use nalgebra::DVector;
use pflow::acceptance::{run_criterion, CRITERIA};
use pflow::scenario::presets;
use pflow::spectral::{spectral_decompose, DEFAULT_GROUP_TOL};
use pflow::sphere::{PoincareSphere, SpherePoint};
use pflow::system::ControlSignal;
use pflow::tangent::{exponent_estimate, selgrade_frames, Direction, FrameLabel, Reprojection};

const KNOWN_UNATTAINABLE: [usize; 1] = [2];

fn main() {
    let results: Vec<_> = (1..=CRITERIA.len()).map(run_criterion).collect();
    for r in &results {
        println!("{r}");
    }
    jordan_bias_explains_criterion_2();
    println!("criterion 2 bias matches −2·ln T/T and −ln T/T");
    let failed: Vec<usize> = results
        .iter()
        .filter(|r| !r.passed && !KNOWN_UNATTAINABLE.contains(&r.id))
        .map(|r| r.id)
        .collect();
    let passed = results.iter().filter(|r| r.passed).count();
    println!("{passed}/{} criteria pass; expected failures {KNOWN_UNATTAINABLE:?}", results.len());
    assert!(failed.is_empty(), "criteria failed: {failed:?}");
}

/// The V_{i0} estimate at (0,1,0,0) in Example 3 is −2·ln T/T, not 0.
fn jordan_bias_explains_criterion_2() {
    let sys = presets::get("example3").unwrap().linear_system().unwrap();
    let sd = spectral_decompose(sys.a(), DEFAULT_GROUP_TOL).unwrap();
    let i0 = sd.index_of(1.0).unwrap();
    let sp = PoincareSphere::adapted(sys.clone(), &sd).unwrap();
    let u = ControlSignal::zero(1);
    let t = 50.0_f64;
    let bias = t.ln() / t;

    let estimate = |x: &[f64], label: FrameLabel| {
        let base = SpherePoint::on_equator(&DVector::from_column_slice(x), sp.gram()).unwrap();
        let frames = selgrade_frames(&sys, &sd, i0, &base, &u).unwrap();
        let f = frames.iter().find(|f| f.label == label).unwrap();
        let rp = Reprojection { spectral: &sd, i0, label };
        let e = exponent_estimate(&sp, &f.generic_vector(sp.gram()), &u, t, Direction::Forward, Some(rp)).unwrap();
        (e, f.theoretical_exponent)
    };

    let (e, th) = estimate(&[0.0, 1.0, 0.0], FrameLabel::Base);
    assert_eq!(th, 0.0);
    assert!((e + 2.0 * bias).abs() < 1e-4, "{e} vs {}", -2.0 * bias);
    let (e, th) = estimate(&[0.0, 1.0, 0.0], FrameLabel::Central);
    assert!((e - th + bias).abs() < 1e-4, "{e} vs {}", th - bias);

    // on the eigendirection the bias vanishes
    let (e, th) = estimate(&[1.0, 0.0, 0.0], FrameLabel::Base);
    assert!((e - th).abs() < 1e-12);
}
