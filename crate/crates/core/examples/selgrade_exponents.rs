//! Selgrade frames over s₀ = (0,1,0,0) in Example 2 and their estimated
//! exponents, forward and backward, at T = 50.

use nalgebra::DVector;
use pflow::scenario::presets;
use pflow::spectral::{spectral_decompose, DEFAULT_GROUP_TOL};
use pflow::sphere::{PoincareSphere, SpherePoint};
use pflow::system::ControlSignal;
use pflow::tangent::{exponent_estimate, selgrade_frames, Direction, Reprojection};

fn main() -> pflow::Result<()> {
    let sys = presets::get("example2")?.linear_system()?;
    let sd = spectral_decompose(sys.a(), DEFAULT_GROUP_TOL)?;
    let i0 = sd.index_of(1.0).expect("λ = 1 is an exponent");
    let sp = PoincareSphere::adapted(sys.clone(), &sd)?;
    let u = ControlSignal::zero(1);
    let base = SpherePoint::on_equator(&DVector::from_vec(vec![0.0, 1.0, 0.0]), sp.gram())?;

    for f in selgrade_frames(&sys, &sd, i0, &base, &u)? {
        let w = f.generic_vector(sp.gram());
        let rp = Reprojection { spectral: &sd, i0, label: f.label };
        let fwd = exponent_estimate(&sp, &w, &u, 50.0, Direction::Forward, Some(rp))?;
        let bwd = exponent_estimate(&sp, &w, &u, 50.0, Direction::Backward, Some(rp))?;
        println!("{:<4} theory {:>5.2}  forward {fwd:>8.5}  backward {bwd:>8.5}", f.label.to_string(), f.theoretical_exponent);
    }
    Ok(())
}
