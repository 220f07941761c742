//! The control set D₀ of Example 1 on a grid and the chain control set that
//! contains it.

use pflow::reach::{chain_control_sets_grid, control_set_d0, ChainParams, ControlModel, Grid};
use pflow::scenario::presets;
use pflow::spectral::{spectral_decompose, DEFAULT_GROUP_TOL};

fn main() -> pflow::Result<()> {
    let sys = presets::get("example1")?.linear_system()?;
    let sd = spectral_decompose(sys.a(), DEFAULT_GROUP_TOL)?;
    let grid = Grid::cube(2, 2.0, 101)?;

    let d0 = control_set_d0(&sys, &sd, &grid, 20.0, 1.0, &ControlModel::Hull)?;
    println!("D0: {} cells", d0.set.len());
    for axis in 0..2 {
        println!("  x{} extent {:?}", axis + 1, grid.extent(&d0.set.cells, axis));
    }
    if let Some(pc) = &d0.product_check {
        println!("  product structure holds for {:.1}% of {} pairs", 100.0 * pc.consistent_fraction, pc.pairs);
    }

    let params = ChainParams {
        tau: 1.5,
        eps: grid.diameter(),
        controls: sys.range().dense_sample(9),
    };
    for (k, e) in chain_control_sets_grid(&sys, &grid, &params)?.iter().enumerate() {
        let d = grid.hausdorff_cells(&e.cells, &d0.set.cells);
        println!("chain set {k}: {} cells, Hausdorff distance to D0 {d:?} cells", e.len());
    }
    Ok(())
}
