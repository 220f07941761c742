//! Acceptance suite: the quantitative reproductions of the five worked
//! examples plus the property suites. Used by `pflow verify` and the
//! `acceptance` test target.

use std::fmt;
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::Result;
use crate::properties::{run_properties, DEFAULT_CASES, DEFAULT_SEED};
use crate::reach::{chain_control_sets_grid, control_set_d0, ChainParams, ControlModel, Grid};
use crate::run::run;
use crate::scenario::{presets, Analysis};
use crate::spectral::{spectral_decompose, SpectralData, DEFAULT_GROUP_TOL};
use crate::sphere::{equilibria_at_infinity, FlowOptions, InfinityKind, PoincareSphere, SpherePoint};
use crate::system::{ControlSignal, LinearSystem};
use crate::tangent::{
    eigen_divergence_example, exponent_estimate, linearized_cocycle_equator, linearized_cocycle_general,
    selgrade_frames, stable_convergence_check, CocycleMethod, Direction, Reprojection, StableCheck, TangentVector,
};

#[derive(Clone, Debug)]
pub struct CriterionResult {
    pub id: usize,
    pub title: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "criterion {:>2} {} — {} ({}; {:.2}s)",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.title,
            self.detail,
            self.seconds
        )
    }
}

type Outcome = Result<(bool, String)>;
type Criterion = (&'static str, fn() -> Outcome);

pub const CRITERIA: [Criterion; 10] = [
    ("exponents of Example 2 at (0,1,0,0)", criterion1),
    ("exponents of Example 3 on the equator circle", criterion2),
    ("exponents of Example 5 along the rotating base orbit", criterion3),
    ("periodic orbit at infinity of Example 4", criterion4),
    ("equilibria at infinity and their stability, Example 1", criterion5),
    ("control set and chain control set of Example 1", criterion6),
    ("linearization closed form vs finite differences", criterion7),
    ("stable-direction convergence and chart divergence", criterion8),
    ("property suites", criterion9),
    ("limit-set classification", criterion10),
];

/// Runtime limits in seconds for criteria that have one.
fn time_limit(id: usize) -> Option<f64> {
    match id {
        1 | 5 => Some(5.0),
        6 => Some(60.0),
        _ => None,
    }
}

pub fn run_criterion(id: usize) -> CriterionResult {
    let (title, f) = CRITERIA[id - 1];
    let t0 = Instant::now();
    let res = f();
    let seconds = t0.elapsed().as_secs_f64();
    let (mut passed, mut detail) = match res {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    if let Some(limit) = time_limit(id) {
        if seconds >= limit {
            passed = false;
            detail = format!("{detail}; runtime {seconds:.2}s exceeds {limit}s");
        }
    }
    CriterionResult {
        id,
        title,
        passed,
        detail,
        seconds,
    }
}

pub fn run_all() -> Vec<CriterionResult> {
    (1..=CRITERIA.len()).map(run_criterion).collect()
}

fn preset_system(name: &str) -> Result<(LinearSystem, SpectralData)> {
    let sys = presets::get(name)?.linear_system()?;
    let sd = spectral_decompose(sys.a(), DEFAULT_GROUP_TOL)?;
    Ok((sys, sd))
}

fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

/// Forward and backward estimates of every frame at each base point against
/// the expected exponent set.
fn exponent_check(name: &str, lambda: f64, bases: &[DVector<f64>], expected: &[f64]) -> Outcome {
    let (sys, sd) = preset_system(name)?;
    let i0 = sd.index_of(lambda).expect("exponent of the example");
    let sp = PoincareSphere::adapted(sys.clone(), &sd)?;
    let u = ControlSignal::zero(1);
    let per_base: Vec<(Vec<f64>, f64)> = bases
        .par_iter()
        .map(|x| -> Result<(Vec<f64>, f64)> {
            let base = SpherePoint::on_equator(x, sp.gram())?;
            let frames = selgrade_frames(&sys, &sd, i0, &base, &u)?;
            let mut theory = Vec::new();
            let mut worst: f64 = 0.0;
            for f in &frames {
                let rp = Reprojection {
                    spectral: &sd,
                    i0,
                    label: f.label,
                };
                let w = f.generic_vector(sp.gram());
                for dir in [Direction::Forward, Direction::Backward] {
                    let e = exponent_estimate(&sp, &w, &u, 50.0, dir, Some(rp))?;
                    worst = worst.max((e - f.theoretical_exponent).abs());
                }
                theory.push(f.theoretical_exponent);
            }
            Ok((theory, worst))
        })
        .collect::<Result<_>>()?;
    let mut want = expected.to_vec();
    want.sort_by(f64::total_cmp);
    let mut ok = true;
    let mut worst: f64 = 0.0;
    for (mut th, w) in per_base {
        th.sort_by(f64::total_cmp);
        ok &= th == want;
        worst = worst.max(w);
    }
    ok &= worst <= 0.05;
    Ok((
        ok,
        format!("{} base points, theory {want:?}, max |estimate − theory| = {worst:.2e} at T = 50", bases.len()),
    ))
}

fn circle(q0: &DVector<f64>, q1: &DVector<f64>, k: usize) -> Vec<DVector<f64>> {
    (0..k)
        .map(|j| {
            let th = std::f64::consts::TAU * j as f64 / k as f64;
            q0 * th.cos() + q1 * th.sin()
        })
        .collect()
}

fn criterion1() -> Outcome {
    exponent_check("example2", 1.0, &[v(&[0.0, 1.0, 0.0])], &[1.0, -1.0, -2.0])
}

fn criterion2() -> Outcome {
    let bases = circle(&v(&[1.0, 0.0, 0.0]), &v(&[0.0, 1.0, 0.0]), 8);
    exponent_check("example3", 1.0, &bases, &[0.0, -1.0, -2.0])
}

fn criterion3() -> Outcome {
    let bases = circle(&v(&[0.0, 1.0, 0.0, 0.0]), &v(&[0.0, 0.0, 1.0, 0.0]), 8);
    exponent_check("example5", 1.0, &bases, &[1.0, -1.0, -2.0, 0.0])
}

fn criterion4() -> Outcome {
    let (sys, _) = preset_system("example4")?;
    let sp = PoincareSphere::new(sys);
    let s0 = sp.point(v(&[0.0, 1.0, 0.0, 0.0]))?;
    let u = ControlSignal::zero(1);
    let opts = FlowOptions::default();
    let traj = sp.trajectory(&s0, &u, 10.0, 0.01, &opts)?;
    let mut err: f64 = 0.0;
    for (t, s) in &traj {
        let want = v(&[t.sin(), t.cos(), 0.0, 0.0]);
        err = err.max((s.coords() - want).amax());
    }
    let rt = sp.return_time(&s0, &u, 1.0, 10.0, &opts)?;
    let rt_err = rt.map_or(f64::INFINITY, |r| (r - std::f64::consts::TAU).abs());
    Ok((
        err <= 1e-6 && rt_err <= 1e-3,
        format!("max componentwise error {err:.2e} on [0, 10]; return time {rt:?} (|T − 2π| = {rt_err:.2e})"),
    ))
}

fn criterion5() -> Outcome {
    let (sys, sd) = preset_system("example1")?;
    let objects = equilibria_at_infinity(&sys, &sd)?;
    let mut points: Vec<DVector<f64>> = Vec::new();
    for o in &objects {
        if o.kind == InfinityKind::Equilibrium {
            points.push(o.basis.column(0).into_owned());
        }
    }
    let targets = [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -1.0, 0.0]];
    let found = points.len() == 4
        && targets.iter().all(|t| points.iter().any(|p| (p - v(t)).amax() < 1e-9));
    let stable: Vec<bool> = objects
        .iter()
        .filter(|o| (o.basis.column(0) - v(&[1.0, 0.0, 0.0])).amax() < 1e-9)
        .map(|o| o.is_transversally_stable())
        .collect();
    // generic points of the upper hemisphere in the basin x₁ > 0
    let sp = PoincareSphere::new(sys);
    let mut rng = ChaCha8Rng::seed_from_u64(DEFAULT_SEED);
    let starts: Vec<DVector<f64>> = (0..100)
        .map(|_| v(&[rng.random_range(0.01..5.0), rng.random_range(-5.0..5.0)]))
        .collect();
    let u = ControlSignal::zero(1);
    let target = sp.point(v(&[1.0, 0.0, 0.0]))?;
    let dists: Vec<f64> = starts
        .par_iter()
        .map(|x| -> Result<f64> {
            let s0 = sp.chart_to_sphere(x)?;
            Ok(sp.distance(&sp.flow(100.0, &s0, &u, &FlowOptions::default())?, &target))
        })
        .collect::<Result<_>>()?;
    let worst = dists.iter().copied().fold(0.0, f64::max);
    Ok((
        found && stable == [true] && worst <= 1e-3,
        format!(
            "equator equilibria found: {found}; (1,0,0) stable: {stable:?}; max distance to (1,0,0) at t = 100 over {} points: {worst:.2e}",
            starts.len()
        ),
    ))
}

fn criterion6() -> Outcome {
    let (sys, sd) = preset_system("example1")?;
    let grid = Grid::cube(2, 2.0, 201)?;
    let d0 = control_set_d0(&sys, &sd, &grid, 20.0, 1.0, &ControlModel::Hull)?;
    let w = grid.width(0);
    let mut ok = true;
    let mut parts = Vec::new();
    for axis in 0..2 {
        let (lo, hi) = grid.extent(&d0.set.cells, axis).unwrap_or((f64::NAN, f64::NAN));
        let e = (lo + 1.0).abs().max((hi - 1.0).abs());
        ok &= e <= w;
        parts.push(format!("x{} extent [{lo:.4}, {hi:.4}]", axis + 1));
    }
    let params = ChainParams {
        tau: 1.5,
        eps: grid.diameter(),
        controls: sys.range().dense_sample(9),
    };
    let sets = chain_control_sets_grid(&sys, &grid, &params)?;
    let h = if sets.len() == 1 {
        grid.hausdorff_cells(&sets[0].cells, &d0.set.cells)
    } else {
        None
    };
    ok &= h.is_some_and(|h| h <= 2);
    parts.push(format!("{} chain control set(s), Hausdorff distance to D0 {h:?} cells", sets.len()));
    Ok((ok, parts.join("; ")))
}

fn criterion7() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (p, name) in presets::names().into_iter().enumerate() {
        let (sys, _) = preset_system(name)?;
        let n = sys.n();
        let sp = PoincareSphere::new(sys.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(DEFAULT_SEED + p as u64);
        let cases: Vec<_> = (0..100)
            .map(|_| {
                let x = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)).normalize();
                let mut d = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
                d -= &x * x.dot(&d);
                let d_last = rng.random_range(-1.0..1.0);
                let t = rng.random_range(0.0..5.0);
                let k = rng.random_range(1..5);
                let mut bps: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..5.0)).collect();
                bps.sort_by(f64::total_cmp);
                let vals: Vec<Vec<f64>> = (0..=k).map(|_| vec![rng.random_range(-1.0..1.0)]).collect();
                (x, d, d_last, t, bps, vals)
            })
            .collect();
        let errs: Vec<f64> = cases
            .par_iter()
            .map(|(x, d, d_last, t, bps, vals)| -> Result<f64> {
                let u = ControlSignal::piecewise(bps.clone(), vals.clone())?;
                let closed = linearized_cocycle_equator(&sp, *t, x, &u, d, *d_last)?;
                let base = SpherePoint::on_equator(x, sp.gram())?;
                let w = TangentVector::new(base, closed_lift(d, *d_last), sp.gram())?;
                let fd = linearized_cocycle_general(&sp, *t, &w, &u, CocycleMethod::FiniteDifference(1e-6))?;
                Ok((&fd.vec - &closed.vec).norm() / closed.vec.norm())
            })
            .collect::<Result<_>>()?;
        count += errs.len();
        worst = errs.into_iter().fold(worst, f64::max);
    }
    Ok((worst <= 1e-4, format!("{count} cases over 5 systems, max relative error {worst:.2e}")))
}

fn closed_lift(d: &DVector<f64>, last: f64) -> DVector<f64> {
    let n = d.len();
    DVector::from_fn(n + 1, |i, _| if i < n { d[i] } else { last })
}

fn criterion8() -> Outcome {
    let (sys, sd) = preset_system("example2")?;
    let sp = PoincareSphere::adapted(sys.clone(), &sd)?;
    let u = ControlSignal::zero(1);
    let base = sp.point(v(&[0.0, 1.0, 0.0, 0.0]))?;
    let i0 = sd.index_of(1.0).expect("exponent 1");
    let frames = selgrade_frames(&sys, &sd, i0, &base, &u)?;
    let mut ok = true;
    let mut finals = Vec::new();
    for seed in 0..5 {
        let rep = stable_convergence_check(
            &sp,
            &frames,
            &u,
            StableCheck {
                delta: 1e-3,
                alpha: -0.5,
                horizon: 30.0,
                seed: DEFAULT_SEED + seed,
            },
        )?;
        ok &= rep.converged && rep.chart_diverged == Some(true);
        finals.push(*rep.weighted_distances.last().unwrap());
    }
    let worst = finals.iter().copied().fold(0.0, f64::max);
    let dv = eigen_divergence_example(&PoincareSphere::new(sys), &v(&[0.0, 1.0, 0.0]), 1.0, -0.5, 30.0)?;
    ok &= dv.converged && dv.diverged;
    Ok((
        ok,
        format!(
            "5 seeds: max weighted distance at t = 30 {worst:.2e}; eigenvector example: converged {}, chart growth rate {:.4}",
            dv.converged, dv.chart_growth_rate
        ),
    ))
}

fn criterion9() -> Outcome {
    let results = run_properties(DEFAULT_CASES, DEFAULT_SEED);
    let ok = results.iter().all(|r| r.passed());
    let summary: Vec<String> = results.iter().map(|r| r.to_string()).collect();
    Ok((ok, summary.join("; ")))
}

fn criterion10() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for name in presets::names() {
        let mut sc = presets::get(name)?;
        let lim = sc
            .analyses
            .iter()
            .find(|a| matches!(a, Analysis::Limits { .. }))
            .cloned()
            .unwrap_or(Analysis::from_kind("limits")?);
        sc.analyses = vec![lim];
        let dir = std::env::temp_dir().join(format!("pflow-acceptance-{}-{name}", std::process::id()));
        let rep = run(&sc, &dir)?;
        std::fs::remove_dir_all(&dir).ok();
        let a = &rep.analyses[0];
        ok &= a.passed();
        let inc = &a.results["inconclusive"];
        let unmatched = a.results["unmatched"].as_array().map_or(0, |v| v.len());
        match &a.error {
            Some(e) => parts.push(format!("{name}: error {e}")),
            None => parts.push(format!("{name}: {unmatched} unmatched, {inc} inconclusive of 50")),
        }
    }
    Ok((ok, parts.join("; ")))
}
