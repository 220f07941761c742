//! Grid and mesh approximations of reachable and controllable sets, the
//! control set around the origin, chain control sets as strongly connected
//! components of (ε,τ)-transition graphs, and ω-limit classification.

use std::collections::{HashMap, VecDeque};
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use petgraph::algo::kosaraju_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numfmt::fmt12;
use crate::spectral::{matrix_exponential, LiftedGram, SpectralData};
use crate::sphere::{FlowOptions, Hemisphere, InfinityKind, InfinityObject, PoincareSphere, SpherePoint};
use crate::system::{ControlSignal, LinearSystem};

/// Largest number of cells a grid may have.
pub const MAX_CELLS: usize = 4_000_000;

/// Uniform partition of an axis-aligned box of ℝⁿ into cells.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Grid {
    lower: Vec<f64>,
    upper: Vec<f64>,
    cells: Vec<usize>,
}

impl Grid {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, cells: Vec<usize>) -> Result<Self> {
        let n = lower.len();
        if upper.len() != n || cells.len() != n {
            return Err(Error::dim("grid specification", n, upper.len().max(cells.len())));
        }
        if n == 0 || n > 4 {
            return Err(Error::Parameter(format!("grids support 1 to 4 dimensions, got {n}")));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::Parameter("grid box must have lower < upper".into()));
        }
        if cells.contains(&0) {
            return Err(Error::Parameter("grid needs at least one cell per axis".into()));
        }
        let total = cells.iter().try_fold(1usize, |acc, &c| acc.checked_mul(c));
        if total.is_none_or(|t| t > MAX_CELLS) {
            return Err(Error::Parameter(format!("grid exceeds {MAX_CELLS} cells")));
        }
        Ok(Grid { lower, upper, cells })
    }

    /// [−r, r]ⁿ with `k` cells per axis.
    pub fn cube(n: usize, r: f64, k: usize) -> Result<Self> {
        Grid::new(vec![-r; n], vec![r; n], vec![k; n])
    }

    pub fn n(&self) -> usize {
        self.cells.len()
    }

    pub fn len(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn cells_per_axis(&self) -> &[usize] {
        &self.cells
    }

    pub fn width(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / self.cells[axis] as f64
    }

    pub fn widths(&self) -> DVector<f64> {
        DVector::from_fn(self.n(), |i, _| self.width(i))
    }

    /// Euclidean diameter of one cell.
    pub fn diameter(&self) -> f64 {
        self.widths().norm()
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.len() == self.n() && (0..self.n()).all(|i| x[i] >= self.lower[i] && x[i] <= self.upper[i])
    }

    fn axis_index(&self, axis: usize, x: f64) -> usize {
        let k = ((x - self.lower[axis]) / self.width(axis)).floor();
        (k.max(0.0) as usize).min(self.cells[axis] - 1)
    }

    /// Cell containing `x`, if `x` lies in the box.
    pub fn index_of(&self, x: &DVector<f64>) -> Option<usize> {
        if !self.contains(x) {
            return None;
        }
        let mi: Vec<usize> = (0..self.n()).map(|i| self.axis_index(i, x[i])).collect();
        Some(self.linear(&mi))
    }

    pub fn linear(&self, mi: &[usize]) -> usize {
        let mut idx = 0;
        for i in (0..self.n()).rev() {
            idx = idx * self.cells[i] + mi[i];
        }
        idx
    }

    pub fn multi(&self, mut idx: usize) -> Vec<usize> {
        let mut mi = Vec::with_capacity(self.n());
        for &c in &self.cells {
            mi.push(idx % c);
            idx /= c;
        }
        mi
    }

    pub fn center(&self, idx: usize) -> DVector<f64> {
        let mi = self.multi(idx);
        DVector::from_fn(self.n(), |i, _| self.lower[i] + (mi[i] as f64 + 0.5) * self.width(i))
    }

    /// Cells meeting the open box (lo, hi), clipped to the grid, and whether the box leaves the grid.
    fn cells_in_box(&self, lo: &DVector<f64>, hi: &DVector<f64>, out: &mut Vec<usize>) -> bool {
        let n = self.n();
        let mut escaped = false;
        let mut ranges = Vec::with_capacity(n);
        for i in 0..n {
            if lo[i] < self.lower[i] || hi[i] > self.upper[i] {
                escaped = true;
            }
            let w = self.width(i);
            let a = ((lo[i] - self.lower[i]) / w).floor();
            let b = ((hi[i] - self.lower[i]) / w).ceil() - 1.0;
            let a = a.max(0.0);
            let b = b.min(self.cells[i] as f64 - 1.0);
            if a > b {
                return escaped;
            }
            ranges.push((a as usize, b as usize));
        }
        let mut mi: Vec<usize> = ranges.iter().map(|r| r.0).collect();
        loop {
            out.push(self.linear(&mi));
            let mut k = 0;
            loop {
                if k == n {
                    return escaped;
                }
                if mi[k] < ranges[k].1 {
                    mi[k] += 1;
                    break;
                }
                mi[k] = ranges[k].0;
                k += 1;
            }
        }
    }

    /// Euclidean distance from `p` to the closed box of cell `idx`.
    pub fn box_distance(&self, idx: usize, p: &DVector<f64>) -> f64 {
        let mi = self.multi(idx);
        let mut d2 = 0.0;
        for i in 0..self.n() {
            let w = self.width(i);
            let lo = self.lower[i] + mi[i] as f64 * w;
            let hi = lo + w;
            let d = if p[i] < lo {
                lo - p[i]
            } else if p[i] > hi {
                p[i] - hi
            } else {
                0.0
            };
            d2 += d * d;
        }
        d2.sqrt()
    }

    /// Chebyshev cell distance from every cell to the nearest cell of `set`
    /// (`u32::MAX` when `set` is empty).
    pub fn distance_transform(&self, set: &[usize]) -> Vec<u32> {
        let mut dist = vec![u32::MAX; self.len()];
        let mut queue = VecDeque::new();
        for &c in set {
            if dist[c] != 0 {
                dist[c] = 0;
                queue.push_back(c);
            }
        }
        let n = self.n();
        let offsets: Vec<Vec<i64>> = (0..3usize.pow(n as u32))
            .map(|mut k| {
                (0..n)
                    .map(|_| {
                        let o = (k % 3) as i64 - 1;
                        k /= 3;
                        o
                    })
                    .collect()
            })
            .filter(|o: &Vec<i64>| o.iter().any(|x| *x != 0))
            .collect();
        while let Some(c) = queue.pop_front() {
            let mi = self.multi(c);
            'nb: for o in &offsets {
                let mut nb = Vec::with_capacity(n);
                for i in 0..n {
                    let v = mi[i] as i64 + o[i];
                    if v < 0 || v >= self.cells[i] as i64 {
                        continue 'nb;
                    }
                    nb.push(v as usize);
                }
                let j = self.linear(&nb);
                if dist[j] == u32::MAX {
                    dist[j] = dist[c] + 1;
                    queue.push_back(j);
                }
            }
        }
        dist
    }

    /// Hausdorff distance between two cell sets in Chebyshev cell steps.
    pub fn hausdorff_cells(&self, a: &[usize], b: &[usize]) -> Option<u32> {
        if a.is_empty() || b.is_empty() {
            return None;
        }
        let da = self.distance_transform(a);
        let db = self.distance_transform(b);
        let ab = a.iter().map(|&c| db[c]).max().unwrap_or(0);
        let ba = b.iter().map(|&c| da[c]).max().unwrap_or(0);
        Some(ab.max(ba))
    }

    /// Lowest and highest cell-center coordinate of `set` along `axis`.
    pub fn extent(&self, set: &[usize], axis: usize) -> Option<(f64, f64)> {
        let w = self.width(axis);
        let coords = set.iter().map(|&c| self.lower[axis] + (self.multi(c)[axis] as f64 + 0.5) * w);
        coords.fold(None, |acc, x| match acc {
            None => Some((x, x)),
            Some((lo, hi)) => Some((lo.min(x), hi.max(x))),
        })
    }
}

/// How the control acts during one propagation step of length τ.
#[derive(Clone, Debug, PartialEq)]
pub enum ControlModel {
    /// All measurable controls: the interval hull of ∫₀^τ e^{As}BU ds is added.
    Hull,
    /// Constant controls from a finite sample only.
    Sample(Vec<DVector<f64>>),
}

/// Affine step maps x ↦ Φx + [lo, hi] for the propagation step.
#[derive(Clone, Debug)]
struct StepMap {
    phi: DMatrix<f64>,
    abs_phi: DMatrix<f64>,
    offsets: Vec<(DVector<f64>, DVector<f64>)>,
}

impl StepMap {
    fn new(sys: &LinearSystem, tau: f64, model: &ControlModel) -> Result<Self> {
        let phi = matrix_exponential(sys.a(), tau)?;
        let abs_phi = phi.abs();
        let offsets = match model {
            ControlModel::Sample(vals) => {
                let mut out = Vec::with_capacity(vals.len());
                for v in vals {
                    if v.len() != sys.m() {
                        return Err(Error::dim("control sample value", sys.m(), v.len()));
                    }
                    let t = sys.lifted_transition(v, tau)?;
                    let g = t.view((0, sys.n()), (sys.n(), 1)).column(0).into_owned();
                    out.push((g.clone(), g));
                }
                out
            }
            ControlModel::Hull => vec![increment_hull(sys, tau)?],
        };
        Ok(StepMap { phi, abs_phi, offsets })
    }
}

/// Interval hull of {∫₀^τ e^{As}Bu(s)ds : u(s) ∈ U}, by composite Simpson
/// quadrature of the coordinatewise extremal integrands plus a small margin.
pub fn increment_hull(sys: &LinearSystem, tau: f64) -> Result<(DVector<f64>, DVector<f64>)> {
    if !(tau > 0.0) {
        return Err(Error::Parameter("step time must be positive".into()));
    }
    let n = sys.n();
    let verts = sys.range().vertices();
    let k = 256;
    let h = tau / k as f64;
    let mut lo = DVector::zeros(n);
    let mut hi = DVector::zeros(n);
    for j in 0..=k {
        let w = if j == 0 || j == k {
            1.0
        } else if j % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let kb = matrix_exponential(sys.a(), j as f64 * h)? * sys.b();
        for i in 0..n {
            let vals = verts.iter().map(|v| (kb.row(i) * v)[(0, 0)]);
            let (mn, mx) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
            lo[i] += w * mn;
            hi[i] += w * mx;
        }
    }
    lo *= h / 3.0;
    hi *= h / 3.0;
    for i in 0..n {
        let margin = 1e-9 * (1.0 + lo[i].abs().max(hi[i].abs()));
        lo[i] -= margin;
        hi[i] += margin;
    }
    Ok((lo, hi))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SetKind {
    Reachable,
    Controllable,
    ControlSet,
    ChainControlSet,
    LimitSet,
}

impl SetKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SetKind::Reachable => "reachable",
            SetKind::Controllable => "controllable",
            SetKind::ControlSet => "control_set",
            SetKind::ChainControlSet => "chain_control_set",
            SetKind::LimitSet => "limit_set",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Equator,
    Central,
}

/// Parameters a set was computed with.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SetParams {
    pub tau: f64,
    pub eps: Option<f64>,
    pub horizon: Option<f64>,
}

/// Cell-set approximation of one of the sets of the control system.
#[derive(Clone, Debug, Serialize)]
pub struct SetApproximation {
    pub kind: SetKind,
    /// Sorted cell (or mesh vertex) indices.
    pub cells: Vec<usize>,
    /// Cells whose image left the grid ("unbounded-escape").
    pub escape: Vec<usize>,
    /// True for outer approximations.
    pub outer: bool,
    pub params: SetParams,
    pub region: Option<Region>,
    /// Number of raw strongly connected components merged into this set.
    pub pieces: usize,
}

impl SetApproximation {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn contains(&self, cell: usize) -> bool {
        self.cells.binary_search(&cell).is_ok()
    }

    pub fn is_subset_of(&self, other: &SetApproximation) -> bool {
        self.cells.iter().all(|c| other.contains(*c))
    }

    pub fn intersection(&self, other: &SetApproximation, kind: SetKind) -> SetApproximation {
        let cells: Vec<usize> = self.cells.iter().copied().filter(|c| other.contains(*c)).collect();
        let escape = self.escape.iter().copied().filter(|c| cells.binary_search(c).is_ok()).collect();
        SetApproximation {
            kind,
            cells,
            escape,
            outer: self.outer && other.outer,
            params: self.params.clone(),
            region: None,
            pieces: 1,
        }
    }
}

/// Outer approximation of the points reachable from `x0` within `horizon`,
/// by breadth-first propagation of cell boxes with step `tau`.
pub fn reachable_set(
    sys: &LinearSystem,
    grid: &Grid,
    x0: &DVector<f64>,
    horizon: f64,
    tau: f64,
    model: &ControlModel,
) -> Result<SetApproximation> {
    if sys.n() != grid.n() {
        return Err(Error::dim("grid", sys.n(), grid.n()));
    }
    let start = grid
        .index_of(x0)
        .ok_or_else(|| Error::input("initial point lies outside the grid box"))?;
    if !(horizon >= 0.0) || !(tau > 0.0) {
        return Err(Error::Parameter("need horizon ≥ 0 and tau > 0".into()));
    }
    let map = StepMap::new(sys, tau, model)?;
    let hw = grid.widths() * 0.5;
    let layers = (horizon / tau - 1e-9).ceil().max(0.0) as usize;
    let mut seen = vec![false; grid.len()];
    let mut escape = vec![false; grid.len()];
    seen[start] = true;
    let mut frontier = vec![start];
    for _ in 0..layers {
        if frontier.is_empty() {
            break;
        }
        let images: Vec<(Vec<usize>, bool)> = frontier
            .par_iter()
            .map(|&c| {
                let center = grid.center(c);
                let base = &map.phi * &center;
                let spread = &map.abs_phi * &hw;
                let mut out = Vec::new();
                let mut esc = false;
                for (lo, hi) in &map.offsets {
                    let a = &base + lo - &spread;
                    let b = &base + hi + &spread;
                    esc |= grid.cells_in_box(&a, &b, &mut out);
                }
                (out, esc)
            })
            .collect();
        let mut next = Vec::new();
        for (&c, (cells, esc)) in frontier.iter().zip(images) {
            if esc {
                escape[c] = true;
            }
            for j in cells {
                if !seen[j] {
                    seen[j] = true;
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        frontier = next;
    }
    let cells: Vec<usize> = (0..grid.len()).filter(|&i| seen[i]).collect();
    let escape: Vec<usize> = (0..grid.len()).filter(|&i| escape[i]).collect();
    Ok(SetApproximation {
        kind: SetKind::Reachable,
        cells,
        escape,
        outer: true,
        params: SetParams {
            tau,
            eps: None,
            horizon: Some(horizon),
        },
        region: None,
        pieces: 1,
    })
}

/// Points from which `target` can be approached within `horizon`: the reachable set
/// of the time-reversed system ẋ = −Ax − Bu. Cells count once their image boxes
/// come within a cell of `target`.
pub fn controllable_set(
    sys: &LinearSystem,
    grid: &Grid,
    target: &DVector<f64>,
    horizon: f64,
    tau: f64,
    model: &ControlModel,
) -> Result<SetApproximation> {
    let mut s = reachable_set(&sys.time_reversed(), grid, target, horizon, tau, model)?;
    s.kind = SetKind::Controllable;
    Ok(s)
}

/// Fraction of sampled cell pairs (a, b) of D₀ for which π⁺a + π⁰a + π⁻b lies within
/// one cell of D₀.
#[derive(Clone, Debug, Serialize)]
pub struct ProductCheck {
    pub pairs: usize,
    pub consistent_fraction: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ControlSetResult {
    pub set: SetApproximation,
    pub reachable: SetApproximation,
    pub controllable: SetApproximation,
    pub product_check: Option<ProductCheck>,
}

/// D₀ ≈ 𝐑(0) ∩ 𝐂(0) on the grid.
pub fn control_set_d0(
    sys: &LinearSystem,
    spectral: &SpectralData,
    grid: &Grid,
    horizon: f64,
    tau: f64,
    model: &ControlModel,
) -> Result<ControlSetResult> {
    let zero = DVector::zeros(sys.n());
    let reachable = reachable_set(sys, grid, &zero, horizon, tau, model)?;
    let controllable = controllable_set(sys, grid, &zero, horizon, tau, model)?;
    let set = reachable.intersection(&controllable, SetKind::ControlSet);
    let product_check = if spectral.has_hyperbolic_part() && spectral.center_index.is_none() && !set.is_empty() {
        let dist = grid.distance_transform(&set.cells);
        let stride = (set.len() / 200).max(1);
        let sample: Vec<usize> = set.cells.iter().copied().step_by(stride).collect();
        let mut ok = 0usize;
        let mut total = 0usize;
        for &a in &sample {
            let ca = grid.center(a);
            let pa = &spectral.proj_plus * &ca + &spectral.proj_center * &ca;
            for &b in &sample {
                let p = &pa + &spectral.proj_minus * grid.center(b);
                total += 1;
                if let Some(c) = grid.index_of(&p) {
                    if dist[c] <= 1 {
                        ok += 1;
                    }
                }
            }
        }
        Some(ProductCheck {
            pairs: total,
            consistent_fraction: ok as f64 / total as f64,
        })
    } else {
        None
    };
    Ok(ControlSetResult {
        set,
        reachable,
        controllable,
        product_check,
    })
}

/// (ε, τ) chain parameters with the control sample used for the graph edges.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainParams {
    pub tau: f64,
    pub eps: f64,
    pub controls: Vec<DVector<f64>>,
}

impl ChainParams {
    /// τ = 0.1, ε = 1.5 × cell diameter, vertices of U plus 0.
    pub fn default_for(sys: &LinearSystem, cell_diameter: f64) -> Self {
        ChainParams {
            tau: 0.1,
            eps: 1.5 * cell_diameter,
            controls: sys.range().sample(),
        }
    }
}

/// Directed graph over cells: i → j when the time-τ image of cell i's
/// representative under some sampled control comes within ε of cell j.
#[derive(Clone, Debug)]
pub struct CellGraph {
    pub succ: Vec<Vec<u32>>,
    /// Cells with an image outside the discretized region.
    pub escape: Vec<bool>,
    pub tau: f64,
    pub eps: f64,
}

impl CellGraph {
    pub fn len(&self) -> usize {
        self.succ.len()
    }

    pub fn is_empty(&self) -> bool {
        self.succ.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.succ.iter().map(|s| s.len()).sum()
    }

    /// Strongly connected components with at least one internal edge, each
    /// sorted, ordered by smallest member.
    pub fn recurrent_components(&self) -> Vec<Vec<usize>> {
        let mut g: DiGraph<(), ()> = DiGraph::with_capacity(self.len(), self.edge_count());
        for _ in 0..self.len() {
            g.add_node(());
        }
        for (i, s) in self.succ.iter().enumerate() {
            for &j in s {
                g.add_edge(NodeIndex::new(i), NodeIndex::new(j as usize), ());
            }
        }
        // kosaraju: petgraph's tarjan_scc recurses and overflows on long cell chains
        let mut comps: Vec<Vec<usize>> = kosaraju_scc(&g)
            .into_iter()
            .map(|c| {
                let mut v: Vec<usize> = c.into_iter().map(|x| x.index()).collect();
                v.sort_unstable();
                v
            })
            .filter(|c| c.len() > 1 || self.succ[c[0]].contains(&(c[0] as u32)))
            .collect();
        comps.sort_by_key(|c| c[0]);
        comps
    }

    /// Every member of `comp` has a successor inside `comp`.
    pub fn is_internally_closed(&self, comp: &[usize]) -> bool {
        comp.iter()
            .all(|&i| self.succ[i].iter().any(|&j| comp.binary_search(&(j as usize)).is_ok()))
    }
}

/// Unites components that come within one jump of each other: at resolution ε
/// they cannot be told apart. Returns (sorted cells, number of pieces), ordered
/// by smallest member.
fn merge_adjacent<F>(comps: Vec<Vec<usize>>, nodes: usize, near: F) -> Vec<(Vec<usize>, usize)>
where
    F: Fn(usize) -> Vec<usize> + Sync,
{
    let mut owner = vec![usize::MAX; nodes];
    for (k, c) in comps.iter().enumerate() {
        for &i in c {
            owner[i] = k;
        }
    }
    let links: Vec<(usize, usize)> = comps
        .par_iter()
        .enumerate()
        .flat_map_iter(|(k, c)| {
            let mut out: Vec<(usize, usize)> = c
                .iter()
                .flat_map(|&i| near(i))
                .filter_map(|j| (owner[j] != usize::MAX && owner[j] != k).then_some((k, owner[j])))
                .collect();
            out.sort_unstable();
            out.dedup();
            out
        })
        .collect();
    let mut parent: Vec<usize> = (0..comps.len()).collect();
    fn root(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for (a, b) in links {
        let (ra, rb) = (root(&mut parent, a), root(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut groups: Vec<(Vec<usize>, usize)> = Vec::new();
    let mut slot: HashMap<usize, usize> = HashMap::new();
    for (k, c) in comps.into_iter().enumerate() {
        let r = root(&mut parent, k);
        let g = *slot.entry(r).or_insert_with(|| {
            groups.push((Vec::new(), 0));
            groups.len() - 1
        });
        groups[g].0.extend(c);
        groups[g].1 += 1;
    }
    for g in &mut groups {
        g.0.sort_unstable();
    }
    groups.sort_by_key(|g| g.0[0]);
    groups
}

fn check_eps(params: &ChainParams, diameter: f64) -> Result<()> {
    if !(params.tau > 0.0) {
        return Err(Error::Parameter("chain step tau must be positive".into()));
    }
    if !(params.eps >= diameter * (1.0 - 1e-12)) {
        return Err(Error::Parameter(format!(
            "eps = {} is below the cell diameter {}",
            params.eps, diameter
        )));
    }
    if params.controls.is_empty() {
        return Err(Error::Parameter("control sample is empty".into()));
    }
    Ok(())
}

/// (ε, τ) graph on an ℝⁿ grid; cell centers are the representatives.
pub fn grid_graph(sys: &LinearSystem, grid: &Grid, params: &ChainParams) -> Result<CellGraph> {
    if sys.n() != grid.n() {
        return Err(Error::dim("grid", sys.n(), grid.n()));
    }
    check_eps(params, grid.diameter())?;
    let map = StepMap::new(sys, params.tau, &ControlModel::Sample(params.controls.clone()))?;
    let eps = params.eps;
    let rows: Vec<(Vec<u32>, bool)> = (0..grid.len())
        .into_par_iter()
        .map(|c| {
            let base = &map.phi * grid.center(c);
            let mut out = Vec::new();
            let mut esc = false;
            let mut cand = Vec::new();
            for (off, _) in &map.offsets {
                let p = &base + off;
                if !grid.contains(&p) {
                    esc = true;
                }
                cand.clear();
                let r = DVector::from_element(grid.n(), eps);
                grid.cells_in_box(&(&p - &r), &(&p + &r), &mut cand);
                out.extend(
                    cand.iter()
                        .filter(|&&j| grid.box_distance(j, &p) <= eps)
                        .map(|&j| j as u32),
                );
            }
            out.sort_unstable();
            out.dedup();
            (out, esc)
        })
        .collect();
    let (succ, escape) = rows.into_iter().unzip();
    Ok(CellGraph {
        succ,
        escape,
        tau: params.tau,
        eps,
    })
}

/// Chain control sets of the system in ℝⁿ on `grid`. Recurrent components closer
/// than ε + cell diameter are reported as one set.
pub fn chain_control_sets_grid(sys: &LinearSystem, grid: &Grid, params: &ChainParams) -> Result<Vec<SetApproximation>> {
    let g = grid_graph(sys, grid, params)?;
    let reach = params.eps + grid.diameter();
    let near = |c: usize| {
        let p = grid.center(c);
        let r = DVector::from_element(grid.n(), reach);
        let mut cand = Vec::new();
        grid.cells_in_box(&(&p - &r), &(&p + &r), &mut cand);
        cand.retain(|&j| (grid.center(j) - &p).norm() <= reach);
        cand
    };
    Ok(merge_adjacent(g.recurrent_components(), grid.len(), near)
        .into_iter()
        .map(|(cells, pieces)| {
            let escape = cells.iter().copied().filter(|&c| g.escape[c]).collect();
            SetApproximation {
                kind: SetKind::ChainControlSet,
                cells,
                escape,
                outer: true,
                params: SetParams {
                    tau: params.tau,
                    eps: Some(params.eps),
                    horizon: None,
                },
                region: None,
                pieces,
            }
        })
        .collect())
}

/// Bucket index over points of ℝᵈ for radius and nearest-neighbour queries.
#[derive(Clone, Debug)]
pub struct PointIndex {
    h: f64,
    points: Vec<DVector<f64>>,
    buckets: HashMap<Vec<i64>, Vec<u32>>,
}

impl PointIndex {
    pub fn new(points: Vec<DVector<f64>>, h: f64) -> Self {
        let mut buckets: HashMap<Vec<i64>, Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            buckets.entry(Self::key(p, h)).or_default().push(i as u32);
        }
        PointIndex { h, points, buckets }
    }

    fn key(p: &DVector<f64>, h: f64) -> Vec<i64> {
        p.iter().map(|x| (x / h).floor() as i64).collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &DVector<f64> {
        &self.points[i]
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    /// Indices of points within Euclidean distance `r` of `p`, ascending.
    pub fn within(&self, p: &DVector<f64>, r: f64) -> Vec<usize> {
        let d = p.len();
        let lo: Vec<i64> = p.iter().map(|x| ((x - r) / self.h).floor() as i64).collect();
        let hi: Vec<i64> = p.iter().map(|x| ((x + r) / self.h).floor() as i64).collect();
        let count: f64 = lo.iter().zip(&hi).map(|(a, b)| (b - a + 1) as f64).product();
        let mut out = Vec::new();
        if count > self.buckets.len() as f64 {
            for (i, q) in self.points.iter().enumerate() {
                if (q - p).norm() <= r {
                    out.push(i);
                }
            }
            return out;
        }
        let mut key = lo.clone();
        loop {
            if let Some(b) = self.buckets.get(&key) {
                out.extend(b.iter().map(|&i| i as usize).filter(|&i| (&self.points[i] - p).norm() <= r));
            }
            let mut k = 0;
            loop {
                if k == d {
                    out.sort_unstable();
                    return out;
                }
                if key[k] < hi[k] {
                    key[k] += 1;
                    break;
                }
                key[k] = lo[k];
                k += 1;
            }
        }
    }

    /// Nearest point and its distance.
    pub fn nearest(&self, p: &DVector<f64>) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut r = self.h;
        loop {
            let cand = self.within(p, r);
            if let Some(best) = cand
                .iter()
                .map(|&i| (i, (&self.points[i] - p).norm()))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            {
                return Some(best);
            }
            r *= 2.0;
        }
    }
}

/// Vertex mesh of an invariant great subsphere of Sⁿ: an icosphere (S²) or a
/// uniform circle (S¹), embedded through an orthonormal frame.
#[derive(Clone, Debug)]
pub struct SphereMesh {
    /// (n+1) × k frame with orthonormal columns (k = 3 or 2) spanning the subsphere.
    frame: DMatrix<f64>,
    /// Vertex coordinates in the frame.
    index: PointIndex,
    diameter: f64,
    label: String,
}

impl SphereMesh {
    /// Recursively subdivided icosahedron with `level` subdivisions on the unit
    /// sphere of span(frame), where `frame` has three columns.
    pub fn icosphere(frame: DMatrix<f64>, level: usize, gram: &LiftedGram) -> Result<Self> {
        check_frame(&frame, 3, gram)?;
        let (verts, max_edge) = icosphere_vertices(level);
        let index = PointIndex::new(verts, max_edge);
        Ok(SphereMesh {
            frame,
            index,
            diameter: max_edge,
            label: format!("icosphere{level}"),
        })
    }

    /// `k` equally spaced points on the unit circle of span(frame), two columns.
    pub fn circle(frame: DMatrix<f64>, k: usize, gram: &LiftedGram) -> Result<Self> {
        check_frame(&frame, 2, gram)?;
        if k < 8 {
            return Err(Error::Parameter("circle mesh needs at least 8 points".into()));
        }
        let pts: Vec<DVector<f64>> = (0..k)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / k as f64;
                DVector::from_vec(vec![a.cos(), a.sin()])
            })
            .collect();
        let diameter = 2.0 * (std::f64::consts::PI / k as f64).sin();
        Ok(SphereMesh {
            frame,
            index: PointIndex::new(pts, diameter),
            diameter,
            label: format!("circle{k}"),
        })
    }

    /// Full S² for planar systems (n = 2).
    pub fn full_s2(level: usize, gram: &LiftedGram) -> Result<Self> {
        if gram.dim() != 3 {
            return Err(Error::dim("full S² mesh", 3, gram.dim()));
        }
        Self::icosphere(DMatrix::identity(3, 3), level, gram)
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Largest distance between adjacent vertices.
    pub fn cell_diameter(&self) -> f64 {
        self.diameter
    }

    pub fn frame(&self) -> &DMatrix<f64> {
        &self.frame
    }

    /// Vertex `i` as a point of Sⁿ.
    pub fn point(&self, i: usize) -> SpherePoint {
        SpherePoint::from_unit(&self.frame * self.index.point(i))
    }

    fn local(&self, p: &DVector<f64>, gram: &LiftedGram) -> (DVector<f64>, f64) {
        let c = DVector::from_fn(self.frame.ncols(), |j, _| gram.inner(&self.frame.column(j).into_owned(), p));
        let off = gram.norm(&(p - &self.frame * &c));
        (c, off)
    }

    /// Nearest vertex to `s` and the distance of `s` from the subsphere.
    pub fn nearest(&self, s: &DVector<f64>, gram: &LiftedGram) -> (usize, f64, f64) {
        let (c, off) = self.local(s, gram);
        let (i, d) = self.index.nearest(&c).expect("mesh is non-empty");
        (i, d, off)
    }
}

fn check_frame(frame: &DMatrix<f64>, k: usize, gram: &LiftedGram) -> Result<()> {
    if frame.ncols() != k || frame.nrows() != gram.dim() {
        return Err(Error::dim("mesh frame", format!("{}x{k}", gram.dim()), format!("{}x{}", frame.nrows(), frame.ncols())));
    }
    for i in 0..k {
        for j in 0..k {
            let ip = gram.inner(&frame.column(i).into_owned(), &frame.column(j).into_owned());
            let target = if i == j { 1.0 } else { 0.0 };
            if (ip - target).abs() > 1e-10 {
                return Err(Error::input("mesh frame must be orthonormal"));
            }
        }
    }
    Ok(())
}

fn icosphere_vertices(level: usize) -> (Vec<DVector<f64>>, f64) {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<[f64; 3]> = vec![
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ];
    let norm = |v: [f64; 3]| {
        let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        [v[0] / r, v[1] / r, v[2] / r]
    };
    for v in &mut verts {
        *v = norm(*v);
    }
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..level {
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut m = [0usize; 3];
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                m[k] = *mid.entry(key).or_insert_with(|| {
                    let (p, q) = (verts[a], verts[b]);
                    verts.push(norm([p[0] + q[0], p[1] + q[1], p[2] + q[2]]));
                    verts.len() - 1
                });
            }
            next.push([f[0], m[0], m[2]]);
            next.push([f[1], m[1], m[0]]);
            next.push([f[2], m[2], m[1]]);
            next.push(m);
        }
        faces = next;
    }
    let mut max_edge: f64 = 0.0;
    for f in &faces {
        for k in 0..3 {
            let (p, q) = (verts[f[k]], verts[f[(k + 1) % 3]]);
            let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
            max_edge = max_edge.max(d);
        }
    }
    (verts.into_iter().map(|v| DVector::from_vec(v.to_vec())).collect(), max_edge)
}

/// (ε, τ) graph on a sphere mesh: vertex images under the exact time-τ map,
/// linked to every vertex within ε + half a cell.
pub fn mesh_graph(sphere: &PoincareSphere, mesh: &SphereMesh, params: &ChainParams) -> Result<CellGraph> {
    check_eps(params, mesh.cell_diameter())?;
    let sys = sphere.system();
    let gram = sphere.gram();
    let mut maps = Vec::with_capacity(params.controls.len());
    for v in &params.controls {
        if v.len() != sys.m() {
            return Err(Error::dim("control sample value", sys.m(), v.len()));
        }
        maps.push(sys.lifted_transition(v, params.tau)?);
    }
    let radius = params.eps + 0.5 * mesh.cell_diameter();
    let rows: Vec<Result<(Vec<u32>, bool)>> = (0..mesh.len())
        .into_par_iter()
        .map(|i| {
            let p = mesh.point(i).into_coords();
            let mut out = Vec::new();
            let mut esc = false;
            for t in &maps {
                let img = sphere.project(&(t * &p))?;
                let (c, off) = mesh.local(img.coords(), gram);
                if off > 1e-6 {
                    esc = true;
                    continue;
                }
                out.extend(mesh.index.within(&c, radius).into_iter().map(|j| j as u32));
            }
            out.sort_unstable();
            out.dedup();
            Ok((out, esc))
        })
        .collect();
    let mut succ = Vec::with_capacity(rows.len());
    let mut escape = Vec::with_capacity(rows.len());
    for r in rows {
        let (s, e) = r?;
        succ.push(s);
        escape.push(e);
    }
    if escape.iter().any(|e| *e) {
        return Err(Error::input(format!(
            "mesh subsphere {} is not invariant under the sampled controls",
            mesh.label()
        )));
    }
    Ok(CellGraph {
        succ,
        escape,
        tau: params.tau,
        eps: params.eps,
    })
}

/// Chain control set on a sphere mesh with its equator/central classification
/// and antipodal partner.
#[derive(Clone, Debug, Serialize)]
pub struct MeshChainSet {
    pub set: SetApproximation,
    /// Equator when most of the vertices lie within one cell of the equator.
    pub region: Region,
    /// Index of the set containing the antipodes, when different from this one.
    pub antipode: Option<usize>,
    /// The set is (approximately) invariant under s ↦ −s.
    pub self_antipodal: bool,
    pub centroid: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct MeshChainSets {
    pub mesh: String,
    pub cell_diameter: f64,
    pub sets: Vec<MeshChainSet>,
}

/// Chain control sets of the induced system on a mesh of an invariant subsphere.
pub fn chain_control_sets_mesh(sphere: &PoincareSphere, mesh: &SphereMesh, params: &ChainParams) -> Result<MeshChainSets> {
    let g = mesh_graph(sphere, mesh, params)?;
    let gram = sphere.gram();
    let reach = params.eps + mesh.cell_diameter();
    let merged = merge_adjacent(g.recurrent_components(), mesh.len(), |i| {
        mesh.index.within(mesh.index.point(i), reach)
    });
    let pieces: Vec<usize> = merged.iter().map(|m| m.1).collect();
    let comps: Vec<Vec<usize>> = merged.into_iter().map(|m| m.0).collect();
    let mut owner: Vec<Option<usize>> = vec![None; mesh.len()];
    for (k, c) in comps.iter().enumerate() {
        for &i in c {
            owner[i] = Some(k);
        }
    }
    let tol = mesh.cell_diameter();
    let mut sets = Vec::with_capacity(comps.len());
    for (k, cells) in comps.iter().enumerate() {
        let on_equator = cells.iter().filter(|&&i| mesh.point(i).last().abs() <= tol).count();
        let region = if 2 * on_equator > cells.len() {
            Region::Equator
        } else {
            Region::Central
        };
        // vote over antipodal images
        let mut votes: HashMap<usize, usize> = HashMap::new();
        for &i in cells {
            let (j, _, _) = mesh.nearest(mesh.point(i).antipode().coords(), gram);
            if let Some(o) = owner[j] {
                *votes.entry(o).or_default() += 1;
            }
        }
        let best = votes.iter().max_by_key(|(o, c)| (**c, std::cmp::Reverse(**o))).map(|(o, c)| (*o, *c));
        let (antipode, self_antipodal) = match best {
            Some((o, c)) if 2 * c >= cells.len() => {
                if o == k {
                    (None, true)
                } else {
                    (Some(o), false)
                }
            }
            _ => (None, false),
        };
        let mut centroid = DVector::zeros(gram.dim());
        for &i in cells {
            centroid += mesh.point(i).coords();
        }
        centroid /= cells.len() as f64;
        let escape = cells.iter().copied().filter(|&c| g.escape[c]).collect();
        sets.push(MeshChainSet {
            set: SetApproximation {
                kind: SetKind::ChainControlSet,
                cells: cells.clone(),
                escape,
                outer: true,
                params: SetParams {
                    tau: params.tau,
                    eps: Some(params.eps),
                    horizon: None,
                },
                region: Some(region),
                pieces: pieces[k],
            },
            region,
            antipode,
            self_antipodal,
            centroid: centroid.iter().copied().collect(),
        });
    }
    Ok(MeshChainSets {
        mesh: mesh.label().to_string(),
        cell_diameter: mesh.cell_diameter(),
        sets,
    })
}

/// Shape of one catalog entry for limit-set classification.
#[derive(Clone, Debug)]
pub enum CatalogShape {
    /// Sampled points of the set on Sⁿ.
    Points(PointIndex),
    /// Analytic invariant object on the equator.
    Object(InfinityObject),
}

#[derive(Clone, Debug)]
pub struct CatalogEntry {
    pub name: String,
    pub region: Region,
    pub shape: CatalogShape,
    /// Resolution of the set (mesh or grid cell diameter on the sphere).
    pub cell: f64,
}

impl CatalogEntry {
    fn distance(&self, s: &SpherePoint, gram: &LiftedGram) -> f64 {
        match &self.shape {
            CatalogShape::Points(idx) => idx.nearest(s.coords()).map_or(f64::INFINITY, |(_, d)| d),
            CatalogShape::Object(o) => o.distance(s, gram),
        }
    }

    /// Whether the entry is an extended set (periodic orbit, continuum or a multi-cell set).
    pub fn is_extended(&self) -> bool {
        match &self.shape {
            CatalogShape::Points(idx) => idx.len() > 1,
            CatalogShape::Object(o) => o.kind != InfinityKind::Equilibrium,
        }
    }
}

/// Known chain control sets and sets at infinity that ω-limit sets are compared against.
#[derive(Clone, Debug, Default)]
pub struct LimitCatalog {
    pub entries: Vec<CatalogEntry>,
}

impl LimitCatalog {
    /// Adds the chain sets found on a mesh.
    pub fn add_mesh_sets(&mut self, mesh: &SphereMesh, sets: &MeshChainSets) {
        for (k, s) in sets.sets.iter().enumerate() {
            let pts: Vec<DVector<f64>> = s.set.cells.iter().map(|&i| mesh.point(i).into_coords()).collect();
            self.entries.push(CatalogEntry {
                name: format!("{}:{k}", sets.mesh),
                region: s.region,
                shape: CatalogShape::Points(PointIndex::new(pts, mesh.cell_diameter())),
                cell: mesh.cell_diameter(),
            });
        }
    }

    /// Adds the analytic equilibria, circles and continua at infinity.
    pub fn add_infinity_objects(&mut self, objects: &[InfinityObject], cell: f64) {
        for (k, o) in objects.iter().enumerate() {
            let kind = match o.kind {
                InfinityKind::Equilibrium => "equilibrium",
                InfinityKind::Circle => "circle",
                InfinityKind::Continuum => "continuum",
            };
            self.entries.push(CatalogEntry {
                name: format!("{kind}:{k}"),
                region: Region::Equator,
                shape: CatalogShape::Object(o.clone()),
                cell,
            });
        }
    }

    /// Adds a chain control set of ℝⁿ lifted to Sⁿ through the chart, together with its antipode.
    pub fn add_grid_set(&mut self, sphere: &PoincareSphere, grid: &Grid, set: &SetApproximation, name: &str) -> Result<()> {
        let mut up = Vec::with_capacity(set.len());
        for &c in &set.cells {
            up.push(sphere.chart_to_sphere(&grid.center(c))?.into_coords());
        }
        let down: Vec<DVector<f64>> = up.iter().map(|p| -p).collect();
        let cell = grid.diameter();
        for (suffix, pts) in [("+", up), ("-", down)] {
            self.entries.push(CatalogEntry {
                name: format!("{name}{suffix}"),
                region: Region::Central,
                shape: CatalogShape::Points(PointIndex::new(pts, cell)),
                cell,
            });
        }
        Ok(())
    }
}

/// Classification of an ω-limit tail against a catalog.
#[derive(Clone, Debug, Serialize)]
pub struct LimitResult {
    /// Name of the nearest catalog entry.
    pub nearest: Option<String>,
    pub region: Option<Region>,
    /// One-sided Hausdorff distance sup_{p ∈ tail} d(p, set) to each entry, in catalog order.
    pub distances: Vec<f64>,
    pub tail_diameter: f64,
    /// Threshold 2 × cell of the nearest entry.
    pub threshold: f64,
    /// The tail lies within the threshold of its nearest entry.
    pub matched: bool,
    pub inconclusive: bool,
    pub tail_hemisphere: Hemisphere,
    pub final_point: Vec<f64>,
}

/// sup_{p ∈ tail} d(p, entry). d(·, entry) is 1-Lipschitz, so a point whose bound
/// from the last evaluated point cannot beat the running maximum is skipped.
fn sup_distance(entry: &CatalogEntry, tail: &[SpherePoint], gram: &LiftedGram) -> f64 {
    let mut best: f64 = 0.0;
    let mut anchor: Option<(&SpherePoint, f64)> = None;
    for p in tail {
        if let Some((q, dq)) = anchor {
            if dq + p.distance(q, gram) <= best {
                continue;
            }
        }
        let d = entry.distance(p, gram);
        best = best.max(d);
        anchor = Some((p, d));
    }
    best
}

/// Integrates to `t_total`, samples the tail [t_total − t_tail, t_total] and compares it
/// with every catalog entry.
pub fn limit_set(
    sphere: &PoincareSphere,
    s0: &SpherePoint,
    u: &ControlSignal,
    t_tail: f64,
    t_total: f64,
    catalog: &LimitCatalog,
) -> Result<LimitResult> {
    if !(t_total > t_tail && t_tail > 0.0) {
        return Err(Error::Parameter("need 0 < T_tail < T_total".into()));
    }
    if catalog.entries.is_empty() {
        return Err(Error::input("limit-set catalog is empty"));
    }
    let gram = sphere.gram();
    let opts = FlowOptions::default();
    let mut prop = sphere.propagator(u, opts)?;
    let t0 = t_total - t_tail;
    let mut s = prop.advance(s0, 0.0, t0)?;
    let k = (t_tail / 0.25).ceil() as usize;
    let dt = t_tail / k as f64;
    let mut tail = vec![s.clone()];
    for i in 0..k {
        let (a, b) = (t0 + i as f64 * dt, t0 + (i + 1) as f64 * dt);
        s = prop.advance(&s, a, b)?;
        tail.push(s.clone());
    }
    let mut diam: f64 = 0.0;
    for i in 0..tail.len() {
        for j in (i + 1)..tail.len() {
            diam = diam.max(tail[i].distance(&tail[j], gram));
        }
    }
    let distances: Vec<f64> = catalog
        .entries
        .iter()
        .map(|e| sup_distance(e, &tail, gram))
        .collect();
    let (best, &dbest) = distances
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("catalog is non-empty");
    let entry = &catalog.entries[best];
    let threshold = 2.0 * entry.cell;
    let matched = dbest < threshold;
    let settled = diam <= threshold || (matched && entry.is_extended());
    let last = tail.last().expect("tail is non-empty");
    Ok(LimitResult {
        nearest: Some(entry.name.clone()),
        region: Some(entry.region),
        distances,
        tail_diameter: diam,
        threshold,
        matched,
        inconclusive: !settled,
        tail_hemisphere: last.hemisphere(),
        final_point: last.coords().iter().copied().collect(),
    })
}

/// Writes one row per cell: index, center coordinates, kind, flags.
pub fn write_cells_csv<W: Write>(mut w: W, dim: usize, rows: &[(usize, Vec<f64>, String, String)]) -> Result<()> {
    let mut header = vec!["index".to_string()];
    header.extend((1..=dim).map(|i| format!("c{i}")));
    header.push("kind".into());
    header.push("flags".into());
    writeln!(w, "{}", header.join(","))?;
    for (idx, c, kind, flags) in rows {
        let coords: Vec<String> = c.iter().map(|x| fmt12(*x)).collect();
        writeln!(w, "{idx},{},{kind},{flags}", coords.join(","))?;
    }
    Ok(())
}

/// CSV rows for a grid set.
pub fn grid_rows(grid: &Grid, set: &SetApproximation, kind: &str) -> Vec<(usize, Vec<f64>, String, String)> {
    set.cells
        .iter()
        .map(|&c| {
            let flags = if set.escape.binary_search(&c).is_ok() {
                "unbounded-escape"
            } else {
                ""
            };
            (c, grid.center(c).iter().copied().collect(), kind.to_string(), flags.to_string())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{spectral_decompose, DEFAULT_GROUP_TOL};
    use crate::sphere::equilibria_at_infinity;
    use crate::system::ControlRange;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_vec(x.to_vec())
    }

    fn example1() -> LinearSystem {
        LinearSystem::from_rows(
            &[vec![1.0, 0.0], vec![0.0, -1.0]],
            &[vec![1.0], vec![1.0]],
            ControlRange::symmetric_box(1, 1.0),
        )
        .unwrap()
    }

    #[test]
    fn grid_indexing() {
        let g = Grid::cube(2, 2.0, 201).unwrap();
        assert_eq!(g.len(), 201 * 201);
        let c = g.index_of(&v(&[0.0, 0.0])).unwrap();
        assert!(g.center(c).norm() < 1e-12);
        for i in [0, 17, 40400] {
            assert_eq!(g.linear(&g.multi(i)), i);
            assert_eq!(g.index_of(&g.center(i)), Some(i));
        }
        assert!(g.index_of(&v(&[2.1, 0.0])).is_none());
        assert!(Grid::cube(5, 1.0, 3).is_err());
    }

    #[test]
    fn distance_transform_counts_steps() {
        let g = Grid::cube(2, 1.0, 5).unwrap();
        let d = g.distance_transform(&[g.linear(&[0, 0])]);
        assert_eq!(d[g.linear(&[4, 2])], 4);
        assert_eq!(d[g.linear(&[1, 1])], 1);
        assert_eq!(g.hausdorff_cells(&[0], &[g.linear(&[2, 3])]), Some(3));
    }

    #[test]
    fn integrator_reach_is_box() {
        let sys = LinearSystem::from_rows(
            &[vec![0.0, 0.0], vec![0.0, 0.0]],
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            ControlRange::symmetric_box(2, 1.0),
        )
        .unwrap();
        let g = Grid::cube(2, 2.0, 41).unwrap();
        let r = reachable_set(&sys, &g, &v(&[0.0, 0.0]), 1.0, 1.0, &ControlModel::Hull).unwrap();
        let w = g.width(0);
        for axis in 0..2 {
            let (lo, hi) = g.extent(&r.cells, axis).unwrap();
            assert!((hi - 1.0).abs() <= w && (lo + 1.0).abs() <= w, "{lo} {hi}");
        }
    }

    #[test]
    fn no_control_gives_tube() {
        let sys = LinearSystem::from_rows(
            &[vec![-1.0, 0.0], vec![0.0, -1.0]],
            &[vec![0.0], vec![0.0]],
            ControlRange::symmetric_box(1, 1.0),
        )
        .unwrap();
        let g = Grid::cube(2, 2.0, 41).unwrap();
        let x0 = v(&[1.5, 0.0]);
        let r = reachable_set(&sys, &g, &x0, 3.0, 0.5, &ControlModel::Hull).unwrap();
        for &c in &r.cells {
            let x = g.center(c);
            assert!(x[1].abs() <= 2.0 * g.width(1));
            assert!(x[0] <= 1.5 + g.width(0) && x[0] >= 1.5 * (-3.0f64).exp() - 2.0 * g.width(0));
        }
    }

    #[test]
    fn reach_is_monotone_and_dual() {
        let sys = example1();
        let g = Grid::cube(2, 2.0, 61).unwrap();
        let x0 = v(&[0.0, 0.0]);
        let a = reachable_set(&sys, &g, &x0, 2.0, 0.5, &ControlModel::Hull).unwrap();
        let b = reachable_set(&sys, &g, &x0, 5.0, 0.5, &ControlModel::Hull).unwrap();
        assert!(a.is_subset_of(&b));
        let c = controllable_set(&sys, &g, &x0, 5.0, 0.5, &ControlModel::Hull).unwrap();
        let d = reachable_set(&sys.time_reversed(), &g, &x0, 5.0, 0.5, &ControlModel::Hull).unwrap();
        assert_eq!(c.cells, d.cells);
        assert!(reachable_set(&sys, &g, &v(&[3.0, 0.0]), 1.0, 0.5, &ControlModel::Hull).is_err());
    }

    #[test]
    fn d0_example1_matches_intervals() {
        let sys = example1();
        let sd = spectral_decompose(sys.a(), DEFAULT_GROUP_TOL).unwrap();
        let g = Grid::cube(2, 2.0, 101).unwrap();
        let d0 = control_set_d0(&sys, &sd, &g, 20.0, 1.0, &ControlModel::Hull).unwrap();
        let w = g.width(0);
        for axis in 0..2 {
            let (lo, hi) = g.extent(&d0.set.cells, axis).unwrap();
            assert!((hi - 1.0).abs() <= w && (lo + 1.0).abs() <= w, "axis {axis}: {lo} {hi}");
        }
        assert!(d0.product_check.unwrap().consistent_fraction > 0.99);
    }

    #[test]
    fn chain_sets_example1_grid() {
        let sys = example1();
        let g = Grid::cube(2, 2.0, 101).unwrap();
        let mut p = ChainParams {
            tau: 1.5,
            eps: g.diameter(),
            controls: sys.range().dense_sample(9),
        };
        let sets = chain_control_sets_grid(&sys, &g, &p).unwrap();
        assert_eq!(sets.len(), 1);
        let sd = spectral_decompose(sys.a(), DEFAULT_GROUP_TOL).unwrap();
        let d0 = control_set_d0(&sys, &sd, &g, 20.0, 1.0, &ControlModel::Hull).unwrap();
        assert!(g.hausdorff_cells(&sets[0].cells, &d0.set.cells).unwrap() <= 2);
        let gg = grid_graph(&sys, &g, &p).unwrap();
        assert!(gg.is_internally_closed(&sets[0].cells));
        p.eps = 0.5 * g.diameter();
        assert!(matches!(chain_control_sets_grid(&sys, &g, &p), Err(Error::Parameter(_))));
    }

    #[test]
    fn icosphere_sizes() {
        let g = LiftedGram::identity(2);
        let m = SphereMesh::full_s2(3, &g).unwrap();
        assert_eq!(m.len(), 642);
        let (i, d, off) = m.nearest(&v(&[0.0, 0.0, 1.0]), &g);
        assert!(d < m.cell_diameter() && off < 1e-12);
        assert!((m.point(i).coords()[2] - 1.0).abs() < m.cell_diameter());
    }

    #[test]
    fn rotation_circle_is_one_scc() {
        let sys = LinearSystem::from_rows(
            &[vec![1.0, 1.0, 0.0], vec![-1.0, 1.0, 0.0], vec![0.0, 0.0, -1.0]],
            &[vec![1.0], vec![1.0], vec![1.0]],
            ControlRange::symmetric_box(1, 1.0),
        )
        .unwrap();
        let sp = PoincareSphere::new(sys.clone());
        let mut frame = DMatrix::zeros(4, 2);
        frame[(0, 0)] = 1.0;
        frame[(1, 1)] = 1.0;
        let mesh = SphereMesh::circle(frame, 256, sp.gram()).unwrap();
        let p = ChainParams::default_for(&sys, mesh.cell_diameter());
        let sets = chain_control_sets_mesh(&sp, &mesh, &p).unwrap();
        assert_eq!(sets.sets.len(), 1);
        assert_eq!(sets.sets[0].set.len(), 256);
        assert!(sets.sets[0].self_antipodal);
        assert_eq!(sets.sets[0].region, Region::Equator);
    }

    #[test]
    fn example1_sphere_chain_sets() {
        let sys = example1();
        let sp = PoincareSphere::new(sys.clone());
        let mesh = SphereMesh::full_s2(4, sp.gram()).unwrap();
        let mut p = ChainParams::default_for(&sys, mesh.cell_diameter());
        p.tau = 1.0;
        p.eps = mesh.cell_diameter();
        let sets = chain_control_sets_mesh(&sp, &mesh, &p).unwrap();
        let eq: Vec<&MeshChainSet> = sets.sets.iter().filter(|s| s.region == Region::Equator).collect();
        let central: Vec<&MeshChainSet> = sets.sets.iter().filter(|s| s.region == Region::Central).collect();
        assert_eq!(eq.len(), 4, "{:?}", sets.sets.iter().map(|s| (&s.centroid, s.set.len())).collect::<Vec<_>>());
        for target in [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -1.0, 0.0]] {
            assert!(eq.iter().any(|s| (v(&s.centroid) - v(&target)).norm() < 0.1));
        }
        assert_eq!(central.len(), 2);
        assert!(central.iter().all(|s| s.antipode.is_some()));
    }

    #[test]
    fn limit_classification_example1() {
        let sys = example1();
        let sd = spectral_decompose(sys.a(), DEFAULT_GROUP_TOL).unwrap();
        let sp = PoincareSphere::new(sys.clone());
        let mut cat = LimitCatalog::default();
        cat.add_infinity_objects(&equilibria_at_infinity(&sys, &sd).unwrap(), 0.05);
        let s0 = sp.chart_to_sphere(&v(&[0.3, 0.7])).unwrap();
        let r = limit_set(&sp, &s0, &ControlSignal::zero(1), 20.0, 100.0, &cat).unwrap();
        assert!(r.matched && !r.inconclusive);
        assert_eq!(r.region, Some(Region::Equator));
        assert!((v(&r.final_point) - v(&[1.0, 0.0, 0.0])).norm() < 1e-3);
    }

    #[test]
    fn csv_rows() {
        let g = Grid::cube(1, 1.0, 4).unwrap();
        let set = SetApproximation {
            kind: SetKind::ControlSet,
            cells: vec![1, 2],
            escape: vec![2],
            outer: true,
            params: SetParams::default(),
            region: None,
            pieces: 1,
        };
        let mut buf = Vec::new();
        write_cells_csv(&mut buf, 1, &grid_rows(&g, &set, "control_set")).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "index,c1,kind,flags\n1,-0.25,control_set,\n2,0.25,control_set,unbounded-escape\n"
        );
    }
}
