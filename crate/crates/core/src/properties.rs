//! Randomized property suites over random systems, controls and points.
//!
//! Each property runs `cases` independent cases; case k of property p uses
//! the ChaCha8 stream seeded with `seed + 1000·p + k`, so a failure can be
//! replayed in isolation.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::spectral::{adapted_gram, matrix_exponential, spectral_decompose, SpectralData, DEFAULT_GROUP_TOL};
use crate::sphere::{FlowOptions, PoincareSphere, SpherePoint};
use crate::system::{bounded_solution, default_horizon, flow, lifted_flow, ControlRange, ControlSignal, LinearSystem};
use crate::tangent::{
    exponent_estimate, linearized_cocycle_general, selgrade_frames, CocycleMethod, Direction, Reprojection,
    TangentVector,
};

pub const DEFAULT_CASES: usize = 500;
pub const DEFAULT_SEED: u64 = 20240611;

#[derive(Clone, Debug)]
pub struct PropertyResult {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    pub first_failure: Option<String>,
}

impl PropertyResult {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

impl fmt::Display for PropertyResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}/{} passed", self.name, self.cases - self.failures, self.cases)?;
        if let Some(m) = &self.first_failure {
            write!(f, " (first failure: {m})")?;
        }
        Ok(())
    }
}

type Check = fn(&mut ChaCha8Rng) -> Result<(), String>;

pub const PROPERTIES: [(&str, Check); 8] = [
    ("cocycle identity", cocycle),
    ("lift consistency (r = 0, r = 1)", lift_consistency),
    ("conjugacy h∘φ = πφ¹∘h", conjugacy),
    ("sphere normalization", normalization),
    ("tangency preservation", tangency),
    ("bounded solution residual and shift equivariance", bounded),
    ("dimension accounting", dimensions),
    ("exponential separation ordering", separation),
];

pub fn run_properties(cases: usize, seed: u64) -> Vec<PropertyResult> {
    PROPERTIES
        .iter()
        .enumerate()
        .map(|(p, (name, check))| run_property(name, *check, p, cases, seed))
        .collect()
}

pub fn run_property(name: &'static str, check: Check, index: usize, cases: usize, seed: u64) -> PropertyResult {
    let fails: Vec<(usize, String)> = (0..cases)
        .into_par_iter()
        .filter_map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1000 * index as u64 + k as u64));
            check(&mut rng).err().map(|e| (k, e))
        })
        .collect();
    PropertyResult {
        name,
        cases,
        failures: fails.len(),
        first_failure: fails.first().map(|(k, e)| format!("case {k}: {e}")),
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, r: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| uniform(rng, -r, r))
}

fn rand_system(rng: &mut ChaCha8Rng) -> LinearSystem {
    let n = rng.random_range(1..=4);
    let m = rng.random_range(1..=2);
    let a = DMatrix::from_fn(n, n, |_, _| uniform(rng, -1.5, 1.5));
    let b = DMatrix::from_fn(n, m, |_, _| uniform(rng, -1.0, 1.0));
    LinearSystem::new(a, b, ControlRange::symmetric_box(m, 1.0)).expect("valid system")
}

/// Piecewise-constant control with up to five switches in [−3, 6].
fn rand_control(rng: &mut ChaCha8Rng, m: usize) -> ControlSignal {
    let k = rng.random_range(0..=5);
    let mut bps: Vec<f64> = (0..k).map(|_| uniform(rng, -3.0, 6.0)).collect();
    bps.sort_by(f64::total_cmp);
    bps.dedup();
    let values = (0..=bps.len()).map(|_| (0..m).map(|_| uniform(rng, -1.0, 1.0)).collect()).collect();
    ControlSignal::piecewise(bps, values).expect("valid control")
}

fn rand_sphere_point(rng: &mut ChaCha8Rng, sphere: &PoincareSphere) -> SpherePoint {
    loop {
        let y = rand_vec(rng, sphere.n() + 1, 1.0);
        if y.norm() > 0.1 {
            return sphere.project(&y).expect("nonzero");
        }
    }
}

fn rel(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1.0)
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn cocycle(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let sys = rand_system(rng);
    let sp = PoincareSphere::new(sys.clone());
    let u = rand_control(rng, sys.m());
    let s0 = rand_sphere_point(rng, &sp);
    let (t, s) = (uniform(rng, 0.0, 2.0), uniform(rng, 0.0, 2.0));
    let o = FlowOptions::default();
    let e = |x: crate::Error| x.to_string();
    let direct = sp.flow(t + s, &s0, &u, &o).map_err(e)?;
    let mid = sp.flow(s, &s0, &u, &o).map_err(e)?;
    let composed = sp.flow(t, &mid, &u.shift(s), &o).map_err(e)?;
    let d = sp.distance(&direct, &composed);
    ensure(d <= 1e-10, || format!("flow cocycle defect {d:e}"))?;
    // the linearization is a cocycle over the flow
    let w = TangentVector::new(
        s0.clone(),
        {
            let v = rand_vec(rng, sys.n() + 1, 1.0);
            &v - s0.coords() * v.dot(s0.coords())
        },
        sp.gram(),
    )
    .map_err(e)?;
    let m = CocycleMethod::ExactLift;
    let d_direct = linearized_cocycle_general(&sp, t + s, &w, &u, m).map_err(e)?;
    let d_mid = linearized_cocycle_general(&sp, s, &w, &u, m).map_err(e)?;
    let d_comp = linearized_cocycle_general(&sp, t, &d_mid, &u.shift(s), m).map_err(e)?;
    let r = rel(&d_comp.vec, &d_direct.vec);
    ensure(r <= 1e-8, || format!("linearization cocycle defect {r:e}"))
}

/// Classical RK4 on ẋ = Ax + Bu, restarted at every switch of `u`.
fn rk4(sys: &LinearSystem, t: f64, x0: &DVector<f64>, u: &ControlSignal) -> DVector<f64> {
    let mut x = x0.clone();
    for seg in u.segments(0.0, t) {
        let bu = sys.b() * &seg.value;
        let k = (seg.duration.abs() * 400.0).ceil().max(1.0) as usize;
        let h = seg.duration / k as f64;
        let f = |y: &DVector<f64>| sys.a() * y + &bu;
        for _ in 0..k {
            let k1 = f(&x);
            let k2 = f(&(&x + &k1 * (h / 2.0)));
            let k3 = f(&(&x + &k2 * (h / 2.0)));
            let k4 = f(&(&x + &k3 * h));
            x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
    }
    x
}

fn lift_consistency(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let sys = rand_system(rng);
    let u = rand_control(rng, sys.m());
    let x = rand_vec(rng, sys.n(), 2.0);
    let t = uniform(rng, 0.0, 3.0);
    let e = |x: crate::Error| x.to_string();
    let free = lifted_flow(&sys, t, &x, 0.0, &u).map_err(e)?;
    let expected = matrix_exponential(sys.a(), t).map_err(e)? * &x;
    let r0 = rel(&free.x, &expected);
    ensure(r0 <= 1e-10 && free.r == 0.0, || format!("r = 0 defect {r0:e}"))?;
    let forced = lifted_flow(&sys, t, &x, 1.0, &u).map_err(e)?;
    let r1 = rel(&forced.x, &rk4(&sys, t, &x, &u));
    ensure(r1 <= 1e-8 && forced.r == 1.0, || format!("r = 1 defect {r1:e}"))?;
    // homogeneity of the lift: φ¹(t, cx, cr, u) = c·φ¹(t, x, r, u)
    let c = uniform(rng, 0.1, 3.0);
    let scaled = lifted_flow(&sys, t, &(&x * c), c, &u).map_err(e)?;
    let rh = rel(&scaled.x, &(&forced.x * c));
    ensure(rh <= 1e-10, || format!("homogeneity defect {rh:e}"))
}

fn conjugacy(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let sys = rand_system(rng);
    let sp = PoincareSphere::new(sys.clone());
    let u = rand_control(rng, sys.m());
    let x = rand_vec(rng, sys.n(), 2.0);
    let t = uniform(rng, -2.0, 2.0);
    let e = |x: crate::Error| x.to_string();
    let lhs = sp.chart_to_sphere(&flow(&sys, t, &x, &u).map_err(e)?).map_err(e)?;
    let s0 = sp.chart_to_sphere(&x).map_err(e)?;
    let rhs = sp.flow(t, &s0, &u, &FlowOptions::default()).map_err(e)?;
    let d = sp.distance(&lhs, &rhs);
    ensure(d <= 1e-10, || format!("exact-lift defect {d:e} at t = {t}"))?;
    let rhs = sp.flow(t, &s0, &u, &FlowOptions::intrinsic()).map_err(e)?;
    let d = sp.distance(&lhs, &rhs);
    ensure(d <= 1e-6, || format!("intrinsic defect {d:e} at t = {t}"))
}

fn normalization(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let sys = rand_system(rng);
    let sd = spectral_decompose(sys.a(), DEFAULT_GROUP_TOL).map_err(|e| e.to_string())?;
    // adapted products are exercised as well as the Euclidean one
    let sp = if rng.random_bool(0.5) {
        PoincareSphere::adapted(sys.clone(), &sd).map_err(|e| e.to_string())?
    } else {
        PoincareSphere::new(sys.clone())
    };
    let u = rand_control(rng, sys.m());
    let s0 = rand_sphere_point(rng, &sp);
    let t = uniform(rng, -5.0, 5.0);
    for opts in [FlowOptions::default(), FlowOptions::intrinsic()] {
        let s = sp.flow(t, &s0, &u, &opts).map_err(|e| e.to_string())?;
        let d = (sp.gram().norm(s.coords()) - 1.0).abs();
        ensure(d <= 1e-12, || format!("{:?}: | ||s|| - 1 | = {d:e}", opts.backend))?;
    }
    Ok(())
}

fn tangency(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let sys = rand_system(rng);
    let sp = PoincareSphere::new(sys.clone());
    let s = rand_sphere_point(rng, &sp);
    let v = rand_vec(rng, sys.m(), 1.0);
    let h = sp.field().eval(s.coords(), &v);
    let r = sp.field().tangency_residual(s.coords(), &v);
    ensure(r <= 1e-12 * h.norm().max(1.0), || format!("vector field residual {r:e}"))?;
    let u = rand_control(rng, sys.m());
    let y = rand_vec(rng, sys.n() + 1, 1.0);
    let w = TangentVector::new(s.clone(), &y - s.coords() * y.dot(s.coords()), sp.gram()).map_err(|e| e.to_string())?;
    let t = uniform(rng, 0.0, 3.0);
    let d = linearized_cocycle_general(&sp, t, &w, &u, CocycleMethod::ExactLift).map_err(|e| e.to_string())?;
    let ip = sp.gram().inner(d.base.coords(), &d.vec).abs();
    ensure(ip <= 1e-12 * d.vec.norm().max(1.0), || format!("propagated vector not tangent: {ip:e}"))
}

/// Random matrix with nonzero exponents (hyperbolic).
fn rand_hyperbolic(rng: &mut ChaCha8Rng) -> (LinearSystem, SpectralData) {
    loop {
        let sys = rand_system(rng);
        if let Ok(sd) = spectral_decompose(sys.a(), DEFAULT_GROUP_TOL) {
            if sd.center_index.is_none() && sd.hyperbolic_gap().is_some_and(|g| g > 0.2) {
                return (sys, sd);
            }
        }
    }
}

fn bounded(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let (sys, sd) = rand_hyperbolic(rng);
    let u = rand_control(rng, sys.m());
    let h = default_horizon(&sd);
    let t = uniform(rng, -2.0, 4.0);
    let e = |x: crate::Error| x.to_string();
    let e0 = bounded_solution(&sys, &sd, &u, 0.0, h).map_err(e)?.value;
    let et = bounded_solution(&sys, &sd, &u, t, h).map_err(e)?.value;
    let propagated = flow(&sys, t, &e0, &u).map_err(e)?;
    let r = rel(&propagated, &et);
    ensure(r <= 1e-6, || format!("residual {r:e} at t = {t}"))?;
    let shifted = bounded_solution(&sys, &sd, &u.shift(t), 0.0, h).map_err(e)?.value;
    let r = rel(&shifted, &et);
    ensure(r <= 1e-9, || format!("shift defect {r:e} at t = {t}"))
}

/// Matrix with prescribed Jordan structure, conjugated by a random well-conditioned matrix.
fn rand_structured(rng: &mut ChaCha8Rng, jordan: bool) -> (DMatrix<f64>, Vec<f64>) {
    let n = rng.random_range(2..=5);
    let pool = [-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0];
    let mut d = DMatrix::zeros(n, n);
    let mut i = 0;
    let mut used = Vec::new();
    while i < n {
        let l = pool[rng.random_range(0..pool.len())];
        used.push(l);
        let kind = rng.random_range(0..3);
        if kind == 1 && i + 1 < n {
            // rotation block l ± iω
            let w = uniform(rng, 0.5, 2.0);
            d[(i, i)] = l;
            d[(i + 1, i + 1)] = l;
            d[(i, i + 1)] = w;
            d[(i + 1, i)] = -w;
            i += 2;
        } else if kind == 2 && jordan && i + 1 < n {
            d[(i, i)] = l;
            d[(i + 1, i + 1)] = l;
            d[(i, i + 1)] = 1.0;
            i += 2;
        } else {
            d[(i, i)] = l;
            i += 1;
        }
    }
    let q = DMatrix::identity(n, n) + DMatrix::from_fn(n, n, |_, _| uniform(rng, -0.3, 0.3));
    let qi = q.clone().try_inverse().expect("diagonally dominant");
    used.sort_by(|a, b| b.total_cmp(a));
    used.dedup();
    (&q * d * qi, used)
}

fn dimensions(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let (a, lambdas) = rand_structured(rng, true);
    let n = a.nrows();
    let sd = spectral_decompose(&a, 1e-6).map_err(|e| e.to_string())?;
    let total: usize = sd.spaces.iter().map(|s| s.ncols()).sum();
    ensure(total == n, || format!("Σ dim = {total}, n = {n}"))?;
    ensure(sd.exponents.len() == lambdas.len(), || {
        format!("exponents {:?}, expected {:?}", sd.exponents, lambdas)
    })?;
    for (x, y) in sd.exponents.iter().zip(&lambdas) {
        ensure((x - y).abs() < 1e-5, || format!("exponent {x} vs {y}"))?;
    }
    sd.check_invariants(&a)?;
    let g = adapted_gram(&sd.spaces).map_err(|e| e.to_string())?;
    ensure((&g - &sd.gram).amax() < 1e-9, || "adapted product differs from the stored one".into())
}

fn separation(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let (a, lambdas) = loop {
        let (a, l) = rand_structured(rng, false);
        if l.iter().any(|x| *x != 0.0) {
            break (a, l);
        }
    };
    let n = a.nrows();
    let sys = LinearSystem::new(a, DMatrix::from_element(n, 1, 1.0), ControlRange::symmetric_box(1, 1.0))
        .map_err(|e| e.to_string())?;
    let sd = spectral_decompose(sys.a(), 1e-6).map_err(|e| e.to_string())?;
    let nonzero: Vec<usize> = (0..sd.exponents.len()).filter(|&i| Some(i) != sd.center_index).collect();
    let i0 = nonzero[rng.random_range(0..nonzero.len())];
    let sp = PoincareSphere::adapted(sys.clone(), &sd).map_err(|e| e.to_string())?;
    let x = sd.spaces[i0].column(0).into_owned();
    let base = SpherePoint::on_equator(&x, sp.gram()).map_err(|e| e.to_string())?;
    let u = ControlSignal::zero(1);
    let frames = selgrade_frames(&sys, &sd, i0, &base, &u).map_err(|e| e.to_string())?;
    let mut est = Vec::new();
    for f in &frames {
        let rp = Reprojection {
            spectral: &sd,
            i0,
            label: f.label,
        };
        let w = f.generic_vector(sp.gram());
        let e = exponent_estimate(&sp, &w, &u, 20.0, Direction::Forward, Some(rp)).map_err(|e| e.to_string())?;
        ensure((e - f.theoretical_exponent).abs() <= 0.15, || {
            format!("{}: estimate {e} vs {} (exponents {lambdas:?})", f.label, f.theoretical_exponent)
        })?;
        est.push((f.theoretical_exponent, e));
    }
    est.sort_by(|a, b| b.0.total_cmp(&a.0));
    for p in est.windows(2) {
        if p[0].0 > p[1].0 {
            ensure(p[0].1 > p[1].1, || format!("ordering violated: {est:?}"))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn properties_small_sample() {
        for r in run_properties(20, 1) {
            assert!(r.passed(), "{r}");
        }
    }
}
