//! The periodic orbit on the equator of Example 4, and the equilibria at
//! infinity of Example 1 with their transverse rates.

use nalgebra::DVector;
use pflow::scenario::presets;
use pflow::spectral::{spectral_decompose, DEFAULT_GROUP_TOL};
use pflow::sphere::{equilibria_at_infinity, FlowOptions, PoincareSphere};
use pflow::system::ControlSignal;

fn main() -> pflow::Result<()> {
    let sys = presets::get("example4")?.linear_system()?;
    let sp = PoincareSphere::new(sys);
    let s0 = sp.point(DVector::from_vec(vec![0.0, 1.0, 0.0, 0.0]))?;
    let u = ControlSignal::zero(1);
    let opts = FlowOptions::default();
    for (t, s) in sp.trajectory(&s0, &u, 6.0, 1.0, &opts)? {
        println!("t = {t:.1}  s = {:>8.5?}   (sin t, cos t) = ({:.5}, {:.5})", s.coords().as_slice(), t.sin(), t.cos());
    }
    let period = sp.return_time(&s0, &u, 1.0, 10.0, &opts)?;
    println!("return time {period:?}");

    let sys = presets::get("example1")?.linear_system()?;
    let sd = spectral_decompose(sys.a(), DEFAULT_GROUP_TOL)?;
    for obj in equilibria_at_infinity(&sys, &sd)? {
        let p = obj.point().map(|p| p.coords().as_slice().to_vec());
        println!("{:?} at {p:?}: transverse rates {:?}", obj.kind, obj.transverse_rates);
    }
    Ok(())
}
