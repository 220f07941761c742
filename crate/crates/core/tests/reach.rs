use nalgebra::{DMatrix, DVector};
use pflow::reach::{chain_control_sets_grid, control_set_d0, ChainParams, ControlModel, Grid};
use pflow::scenario::presets;
use pflow::spectral::{spectral_decompose, DEFAULT_GROUP_TOL};
use pflow::system::{ControlRange, LinearSystem};

fn system(a: &[Vec<f64>], b: &[Vec<f64>], m: usize) -> LinearSystem {
    LinearSystem::from_rows(a, b, ControlRange::symmetric_box(m, 1.0)).unwrap()
}

#[test]
fn no_input_leaves_only_the_origin() {
    let sys = system(&[vec![1.0, 0.0], vec![0.0, -1.0]], &[vec![0.0], vec![0.0]], 1);
    let sd = spectral_decompose(sys.a(), DEFAULT_GROUP_TOL).unwrap();
    let grid = Grid::cube(2, 2.0, 41).unwrap();
    let d0 = control_set_d0(&sys, &sd, &grid, 20.0, 1.0, &ControlModel::Hull).unwrap();
    let c = grid.index_of(&DVector::zeros(2)).unwrap();
    assert_eq!(d0.set.cells, vec![c]);
}

// ẋ = −x + u, u ∈ [−1,1]²: everything reachable from 0 lies in the open unit box
// and the box is the control set's closure.
#[test]
fn hurwitz_box() {
    let sys = LinearSystem::new(-DMatrix::identity(2, 2), DMatrix::identity(2, 2), ControlRange::symmetric_box(2, 1.0)).unwrap();
    let sd = spectral_decompose(sys.a(), DEFAULT_GROUP_TOL).unwrap();
    let grid = Grid::cube(2, 2.0, 81).unwrap();
    let d0 = control_set_d0(&sys, &sd, &grid, 20.0, 1.0, &ControlModel::Hull).unwrap();
    let h = grid.diameter();
    for axis in 0..2 {
        let (lo, hi) = grid.extent(&d0.set.cells, axis).unwrap();
        assert!((lo + 1.0).abs() <= h && (hi - 1.0).abs() <= h, "axis {axis}: [{lo}, {hi}]");
    }
}

// A = diag(2, 1, −1), B = (1,1,1)ᵀ: each coordinate alone is bounded by its
// scalar equilibria ∓1/λ. The box hull ignores the coupling through the single
// input, so D₀ comes out as the whole box here.
#[test]
fn example2_d0_and_chain_set() {
    let sys = presets::get("example2").unwrap().linear_system().unwrap();
    let sd = spectral_decompose(sys.a(), DEFAULT_GROUP_TOL).unwrap();
    let grid = Grid::cube(3, 2.0, 41).unwrap();
    let d0 = control_set_d0(&sys, &sd, &grid, 20.0, 1.0, &ControlModel::Hull).unwrap();
    let h = grid.diameter();
    for (axis, r) in [0.5, 1.0, 1.0].into_iter().enumerate() {
        let (lo, hi) = grid.extent(&d0.set.cells, axis).unwrap();
        assert!(lo >= -r - h && hi <= r + h, "axis {axis}: [{lo}, {hi}]");
        assert!(hi - lo > r, "axis {axis} collapsed: [{lo}, {hi}]");
    }

    // a chain graph on cell centers fattens the set by about ε/(1 − e^{−τ})
    // in the contracting direction: 4.4 cells here
    let params = ChainParams {
        tau: 0.5,
        eps: h,
        controls: sys.range().dense_sample(9),
    };
    let sets = chain_control_sets_grid(&sys, &grid, &params).unwrap();
    assert_eq!(sets.len(), 1);
    let dist = grid.hausdorff_cells(&sets[0].cells, &d0.set.cells).unwrap();
    assert!(dist <= 6, "Hausdorff distance {dist} cells");
}
