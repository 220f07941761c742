//! Lyapunov decomposition of the five example systems, and the bounded
//! solution of Example 1 for a constant control.

use pflow::scenario::presets;
use pflow::spectral::{spectral_decompose, DEFAULT_GROUP_TOL};
use pflow::system::{bounded_solution, default_horizon, ControlSignal};

fn main() -> pflow::Result<()> {
    for name in presets::names() {
        let sys = presets::get(name)?.linear_system()?;
        let sd = spectral_decompose(sys.a(), DEFAULT_GROUP_TOL)?;
        let dims: Vec<usize> = (0..sd.exponents.len()).map(|i| sd.space_dim(i)).collect();
        println!("{name}: exponents {:?}, dims {dims:?}, center {:?}", sd.exponents, sd.center_index);
    }

    let sys = presets::get("example1")?.linear_system()?;
    let sd = spectral_decompose(sys.a(), DEFAULT_GROUP_TOL)?;
    let u = ControlSignal::constant(vec![1.0]);
    let e = bounded_solution(&sys, &sd, &u, 0.0, default_horizon(&sd))?;
    // u ≡ 1: the constant equilibrium (−1, 1)
    println!("e(u, 0) for u = 1: {:?}", e.value.as_slice());
    Ok(())
}
