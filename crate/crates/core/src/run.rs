//! Scenario runner: executes the requested analyses in dependency order,
//! writes `<out>/<analysis>.csv`, `<out>/portrait_<name>.svg` and
//! `<out>/report.json`.
//!
//! CSV columns per analysis:
//!
//! | file | columns |
//! |---|---|
//! | decompose.csv | index, exponent, dimension, part |
//! | simulate.csv | t, x1 … xn |
//! | sphere-sim.csv | trajectory, t, s1 … s(n+1) |
//! | selgrade.csv | label, column, theoretical, w1 … w(n+1) |
//! | exponents.csv | base_point, subbundle_label, theoretical, estimated_T50_forward, estimated_T50_backward, abs_error |
//! | verify-stable.csv | t, weighted_distance |
//! | reach.csv | index, c1 … cn, kind, flags |
//! | chain.csv / chain_sphere.csv | index, c1 …, kind, flags |
//! | limits.csv | sample, nearest, region, distance, tail_diameter, threshold, matched, inconclusive, f1 … f(n+1) |
//!
//! Vectors inside a CSV field (base points) are space separated.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::numfmt::{fmt12, fmt_vec, round12};
use crate::portrait::{emit_portrait, PortraitData, Projection, ShadedSet};
use crate::reach::{
    chain_control_sets_grid, chain_control_sets_mesh, control_set_d0, grid_rows, limit_set, write_cells_csv,
    ChainParams, ControlModel, Grid, LimitCatalog, MeshChainSets, Region, SetApproximation, SphereMesh,
};
use crate::scenario::{Analysis, BackendSpec, PointFrame, Scenario};
use crate::spectral::{spectral_decompose, SpectralData, DEFAULT_GROUP_TOL};
use crate::sphere::{equilibria_at_infinity, Backend, FlowOptions, InfinityKind, InfinityObject, PoincareSphere, SpherePoint};
use crate::system::{flow, ControlSignal, LinearSystem};
use crate::tangent::{
    eigen_divergence_example, exponent_estimate, kappa_minus, selgrade_frames, stable_convergence_check, Direction,
    Reprojection, StableCheck, SubbundleFrame,
};

/// Environment variable that overrides the scenario seed.
pub const SEED_ENV: &str = "PFLOW_SEED";

/// Applies `PFLOW_SEED` if it is set.
pub fn apply_seed_override(sc: &mut Scenario) -> Result<()> {
    if let Ok(v) = std::env::var(SEED_ENV) {
        sc.seed = v
            .trim()
            .parse()
            .map_err(|_| Error::input(format!("{SEED_ENV} must be an unsigned integer, got `{v}`")))?;
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Assertion {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Assertion {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AnalysisReport {
    pub kind: String,
    /// Position in the scenario's analysis list.
    pub index: usize,
    pub ok: bool,
    pub error: Option<String>,
    pub assertions: Vec<Assertion>,
    pub results: Value,
    pub files: Vec<String>,
    pub seconds: f64,
}

impl AnalysisReport {
    pub fn passed(&self) -> bool {
        self.ok && self.assertions.iter().all(|a| a.passed)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub name: String,
    pub seed: u64,
    /// The validated scenario with every default filled in.
    pub scenario: Scenario,
    pub analyses: Vec<AnalysisReport>,
    pub files: Vec<String>,
    pub passed: bool,
    pub seconds: f64,
}

impl RunReport {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            1
        }
    }

    pub fn analysis(&self, kind: &str) -> Option<&AnalysisReport> {
        self.analyses.iter().find(|a| a.kind == kind)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&round_value(serde_json::to_value(self).expect("report serializes")))
            .expect("report serializes")
    }
}

/// Rounds every float in a JSON tree to 12 significant digits.
fn round_value(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = round12(n.as_f64().unwrap());
            serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(round_value).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, round_value(v))).collect()),
        v => v,
    }
}

struct Outcome {
    results: Value,
    assertions: Vec<Assertion>,
    files: Vec<(String, String)>,
}

impl Outcome {
    fn new(results: Value) -> Self {
        Outcome {
            results,
            assertions: Vec::new(),
            files: Vec::new(),
        }
    }
}

struct ChainOutput {
    grid: Grid,
    sets: Vec<SetApproximation>,
    mesh: Option<(SphereMesh, MeshChainSets)>,
}

struct Ctx<'a> {
    sc: &'a Scenario,
    sys: LinearSystem,
    u: ControlSignal,
    spectral: Option<SpectralData>,
    d0: Option<(Grid, SetApproximation)>,
    chain: Option<ChainOutput>,
    trajectories: Vec<Vec<DVector<f64>>>,
}

impl Ctx<'_> {
    fn spectral(&mut self) -> Result<&SpectralData> {
        if self.spectral.is_none() {
            self.spectral = Some(spectral_decompose(self.sys.a(), DEFAULT_GROUP_TOL)?);
        }
        Ok(self.spectral.as_ref().unwrap())
    }

    fn n(&self) -> usize {
        self.sys.n()
    }

    fn u_is_zero(&self) -> bool {
        self.u.values().iter().flatten().all(|x| *x == 0.0)
    }
}

/// Runs every analysis of `sc` and writes the artifacts to `out`.
///
/// Analysis failures are recorded in the report; only I/O errors abort.
pub fn run(sc: &Scenario, out: &Path) -> Result<RunReport> {
    sc.validate()?;
    let start = Instant::now();
    let mut ctx = Ctx {
        sc,
        sys: sc.linear_system()?,
        u: sc.control_signal()?,
        spectral: None,
        d0: None,
        chain: None,
        trajectories: Vec::new(),
    };
    std::fs::create_dir_all(out)?;
    let mut order: Vec<usize> = (0..sc.analyses.len()).collect();
    order.sort_by_key(|&i| (sc.analyses[i].rank(), i));

    let mut reports = Vec::new();
    let mut used_names: BTreeMap<String, usize> = BTreeMap::new();
    let mut all_files = Vec::new();
    let mut portrait_done = false;
    for i in order {
        let a = &sc.analyses[i];
        let t0 = Instant::now();
        let res = run_one(&mut ctx, a);
        let seconds = t0.elapsed().as_secs_f64();
        let mut rep = AnalysisReport {
            kind: a.kind().to_string(),
            index: i,
            ok: true,
            error: None,
            assertions: Vec::new(),
            results: Value::Null,
            files: Vec::new(),
            seconds,
        };
        match res {
            Ok(o) => {
                rep.results = o.results;
                rep.assertions = o.assertions;
                for (name, body) in o.files {
                    let name = unique(&mut used_names, name);
                    std::fs::write(out.join(&name), body)?;
                    rep.files.push(name.clone());
                    all_files.push(name);
                }
            }
            Err(e) => {
                rep.ok = false;
                rep.error = Some(e.to_string());
            }
        }
        portrait_done |= matches!(a, Analysis::Portrait { .. }) && rep.ok;
        reports.push(rep);
    }
    // sphere simulations without an explicit portrait still get a picture
    if !portrait_done && !ctx.trajectories.is_empty() {
        let coords = default_coords(ctx.n());
        let data = portrait_data(&mut ctx, Vec::new())?;
        let svg = emit_portrait(&data, Some(&Projection { coords }))?;
        let name = unique(&mut used_names, format!("portrait_{}.svg", sc.name));
        std::fs::write(out.join(&name), svg)?;
        all_files.push(name);
    }
    let passed = reports.iter().all(|r| r.passed());
    let report = RunReport {
        name: sc.name.clone(),
        seed: sc.seed,
        scenario: sc.clone(),
        analyses: reports,
        files: all_files,
        passed,
        seconds: start.elapsed().as_secs_f64(),
    };
    std::fs::write(out.join("report.json"), report.to_json())?;
    Ok(report)
}

/// Output directory of a scenario: `output_dir` unless overridden.
pub fn output_dir(sc: &Scenario, over: Option<&Path>) -> PathBuf {
    over.map_or_else(|| PathBuf::from(&sc.output_dir), Path::to_path_buf)
}

fn unique(used: &mut BTreeMap<String, usize>, name: String) -> String {
    let k = used.entry(name.clone()).or_insert(0);
    *k += 1;
    if *k == 1 {
        return name;
    }
    match name.rsplit_once('.') {
        Some((stem, ext)) => format!("{stem}_{k}.{ext}"),
        None => format!("{name}_{k}"),
    }
}

fn default_coords(n: usize) -> Vec<usize> {
    if n <= 2 {
        vec![0, 1]
    } else {
        vec![0, 1, 2]
    }
}

fn run_one(ctx: &mut Ctx, a: &Analysis) -> Result<Outcome> {
    match a {
        Analysis::Decompose { group_tol } => decompose(ctx, *group_tol),
        Analysis::Simulate { x0, t_end, dt } => simulate(ctx, x0, *t_end, *dt),
        Analysis::SphereSim {
            initial,
            frame,
            t_end,
            dt,
            backend,
            expect_period,
        } => sphere_sim(ctx, initial, *frame, *t_end, *dt, *backend, *expect_period),
        Analysis::Selgrade { lambda, base_point } => selgrade(ctx, *lambda, base_point),
        Analysis::Exponents {
            lambda,
            base_points,
            samples,
            horizon,
            tolerance,
            reproject,
        } => exponents(ctx, *lambda, base_points, *samples, *horizon, *tolerance, *reproject),
        Analysis::VerifyStable {
            lambda,
            base_point,
            delta,
            alpha,
            horizon,
            divergence,
            tau,
        } => verify_stable(ctx, *lambda, base_point, *delta, *alpha, *horizon, divergence, *tau),
        Analysis::Reach {
            cells,
            radius,
            horizon,
            tau,
        } => reach(ctx, *cells, *radius, *horizon, *tau),
        Analysis::Chain {
            cells,
            radius,
            tau,
            eps_factor,
            control_levels,
            sphere,
            mesh_level,
            sphere_tau,
        } => chain(ctx, *cells, *radius, *tau, *eps_factor, *control_levels, *sphere, *mesh_level, *sphere_tau),
        Analysis::Limits {
            samples,
            t_total,
            t_tail,
            cell,
            max_inconclusive,
        } => limits(ctx, *samples, *t_total, *t_tail, *cell, *max_inconclusive),
        Analysis::Portrait {
            coords,
            trajectories,
            t_end,
        } => portrait(ctx, coords, *trajectories, *t_end),
    }
}

fn vec_json(v: &DVector<f64>) -> Value {
    json!(v.iter().copied().collect::<Vec<f64>>())
}

fn object_json(o: &InfinityObject) -> Value {
    let cols: Vec<Value> = (0..o.basis.ncols()).map(|j| vec_json(&o.basis.column(j).into_owned())).collect();
    json!({
        "kind": o.kind,
        "basis": cols,
        "eigenvalue": [o.eigenvalue.0, o.eigenvalue.1],
        "frequency": o.frequency,
        "transverse_rates": o.transverse_rates,
        "transversally_stable": o.is_transversally_stable(),
    })
}

fn decompose(ctx: &mut Ctx, group_tol: f64) -> Result<Outcome> {
    let sd = spectral_decompose(ctx.sys.a(), group_tol)?;
    let n = ctx.n();
    let mut o = Outcome::new(Value::Null);
    let inv = sd.check_invariants(ctx.sys.a());
    o.assertions.push(Assertion::new(
        "spectral invariants",
        inv.is_ok(),
        inv.err().unwrap_or_default(),
    ));
    let total: usize = (0..sd.exponents.len()).map(|i| sd.space_dim(i)).sum();
    o.assertions.push(Assertion::new(
        "sum of Lyapunov space dimensions equals n",
        total == n,
        format!("{total} vs {n}"),
    ));
    let objects = equilibria_at_infinity(&ctx.sys, &sd)?;
    let mut csv = String::from("index,exponent,dimension,part\n");
    let mut spaces = Vec::new();
    for (i, &l) in sd.exponents.iter().enumerate() {
        let part = if Some(i) == sd.center_index {
            "center"
        } else if l > 0.0 {
            "unstable"
        } else {
            "stable"
        };
        let _ = writeln!(csv, "{},{},{},{}", i + 1, fmt12(l), sd.space_dim(i), part);
        let basis: Vec<Value> = (0..sd.space_dim(i)).map(|j| vec_json(&sd.spaces[i].column(j).into_owned())).collect();
        spaces.push(json!({"exponent": l, "dimension": sd.space_dim(i), "part": part, "basis": basis}));
    }
    o.results = json!({
        "exponents": sd.exponents,
        "spaces": spaces,
        "eigenvalues": sd.eigenvalues,
        "center_index": sd.center_index,
        "hyperbolic_gap": sd.hyperbolic_gap(),
        "kalman_rank": ctx.sys.kalman_rank(),
        "equilibria_at_infinity": objects.iter().map(object_json).collect::<Vec<_>>(),
        "warnings": sd.warnings,
    });
    o.files.push(("decompose.csv".into(), csv));
    ctx.spectral = Some(sd);
    Ok(o)
}

fn simulate(ctx: &mut Ctx, x0: &[f64], t_end: f64, dt: f64) -> Result<Outcome> {
    let n = ctx.n();
    let k = (t_end / dt).round().max(1.0) as usize;
    let h = t_end / k as f64;
    let mut x = DVector::from_column_slice(x0);
    let mut csv = String::from("t");
    for i in 1..=n {
        let _ = write!(csv, ",x{i}");
    }
    csv.push('\n');
    let _ = writeln!(csv, "0,{}", fmt_vec(x.as_slice(), ","));
    for i in 0..k {
        let t = i as f64 * h;
        x = flow(&ctx.sys, h, &x, &ctx.u.shift(t))?;
        let _ = writeln!(csv, "{},{}", fmt12((i + 1) as f64 * h), fmt_vec(x.as_slice(), ","));
    }
    let mut o = Outcome::new(json!({"t_end": t_end, "final_state": vec_json(&x), "final_norm": x.norm()}));
    o.assertions
        .push(Assertion::new("trajectory is finite", x.iter().all(|v| v.is_finite()), ""));
    o.files.push(("simulate.csv".into(), csv));
    Ok(o)
}

/// Default sphere initial conditions: chart points on circles around the origin,
/// avoiding the coordinate axes.
fn default_initial(sphere: &PoincareSphere, count: usize) -> Result<Vec<SpherePoint>> {
    let n = sphere.n();
    let mut out = Vec::new();
    for k in 0..count {
        let th = (k as f64 + 0.5) * TAU / count as f64;
        let r = [0.5, 2.0, 8.0][k % 3];
        let mut x = DVector::zeros(n);
        if n == 1 {
            x[0] = if k % 2 == 0 { r } else { -r };
        } else {
            x[0] = r * th.cos();
            x[1] = r * th.sin();
            for i in 2..n {
                x[i] = 0.3 * r * ((i as f64) * th).sin();
            }
        }
        out.push(sphere.chart_to_sphere(&x)?);
    }
    Ok(out)
}

fn sphere_sim(
    ctx: &mut Ctx,
    initial: &[Vec<f64>],
    frame: PointFrame,
    t_end: f64,
    dt: f64,
    backend: BackendSpec,
    expect_period: Option<f64>,
) -> Result<Outcome> {
    let sphere = PoincareSphere::new(ctx.sys.clone());
    let n = ctx.n();
    let opts = match backend {
        BackendSpec::ExactLift => FlowOptions::default(),
        BackendSpec::Intrinsic => FlowOptions::intrinsic(),
    };
    let starts = if initial.is_empty() {
        default_initial(&sphere, 8)?
    } else {
        initial
            .iter()
            .map(|p| {
                let v = DVector::from_column_slice(p);
                match frame {
                    PointFrame::Sphere => sphere.project(&v),
                    PointFrame::Chart => sphere.chart_to_sphere(&v),
                }
            })
            .collect::<Result<Vec<_>>>()?
    };
    let sd = ctx.spectral()?.clone();
    let objects = equilibria_at_infinity(&ctx.sys, &sd)?;
    let gram = sphere.gram().clone();
    let trajs: Vec<Vec<(f64, SpherePoint)>> = starts
        .par_iter()
        .map(|s| sphere.trajectory(s, &ctx.u, t_end, dt, &opts))
        .collect::<Result<_>>()?;

    let mut o = Outcome::new(Value::Null);
    let mut csv = String::from("trajectory,t");
    for i in 1..=n + 1 {
        let _ = write!(csv, ",s{i}");
    }
    csv.push('\n');
    let mut entries = Vec::new();
    let mut max_norm_err: f64 = 0.0;
    for (k, (s0, tr)) in starts.iter().zip(&trajs).enumerate() {
        for (t, s) in tr {
            let _ = writeln!(csv, "{k},{},{}", fmt12(*t), fmt_vec(s.coords().as_slice(), ","));
            max_norm_err = max_norm_err.max((gram.norm(s.coords()) - 1.0).abs());
        }
        let last = &tr.last().unwrap().1;
        let on_equator = s0.last().abs() < 1e-12;
        let nearest = objects
            .iter()
            .enumerate()
            .map(|(i, ob)| (i, ob.distance(last, &gram)))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        let mut entry = json!({
            "initial": vec_json(s0.coords()),
            "final": vec_json(last.coords()),
            "nearest_object_at_infinity": nearest.map(|(i, _)| i),
            "distance_to_nearest_object": nearest.map(|(_, d)| d),
        });
        if on_equator {
            let drift = tr.iter().map(|(_, s)| s.last().abs()).fold(0.0, f64::max);
            o.assertions.push(Assertion::new(
                format!("trajectory {k} stays on the equator"),
                drift <= 1e-9,
                format!("max |s_n+1| = {drift:e}"),
            ));
        }
        if on_equator || expect_period.is_some() {
            let t_max = expect_period.map_or(t_end, |p| (1.5 * p).max(t_end));
            let rt = sphere.return_time(s0, &ctx.u, 0.5, t_max, &opts)?;
            entry["return_time"] = json!(rt);
            if let Some(p) = expect_period {
                let ok = rt.is_some_and(|r| (r - p).abs() <= 1e-3);
                o.assertions.push(Assertion::new(
                    format!("trajectory {k} return time"),
                    ok,
                    format!("{rt:?} vs expected {p}"),
                ));
            }
        }
        entries.push(entry);
    }
    o.assertions.push(Assertion::new(
        "trajectories stay on the sphere",
        max_norm_err <= 1e-9,
        format!("max | ||s|| - 1 | = {max_norm_err:e}"),
    ));
    o.results = json!({
        "backend": match opts.backend { Backend::ExactLift => "exact-lift", Backend::Intrinsic => "intrinsic" },
        "t_end": t_end,
        "trajectories": entries,
        "max_normalization_error": max_norm_err,
    });
    ctx.trajectories = trajs
        .iter()
        .map(|tr| tr.iter().map(|(_, s)| s.coords().clone()).collect())
        .collect();
    o.files.push(("sphere-sim.csv".into(), csv));
    Ok(o)
}

fn lambda_index(sd: &SpectralData, lambda: f64) -> Result<usize> {
    let i = sd
        .index_of(lambda)
        .ok_or_else(|| Error::input(format!("{lambda} is not a Lyapunov exponent (exponents: {:?})", sd.exponents)))?;
    if sd.center_index == Some(i) {
        return Err(Error::input("λ_i0 must be nonzero"));
    }
    Ok(i)
}

fn base_on_equator(sd: &SpectralData, i0: usize, x: &[f64], sphere: &PoincareSphere) -> Result<SpherePoint> {
    let x = if x.is_empty() {
        sd.spaces[i0].column(0).into_owned()
    } else {
        DVector::from_column_slice(x)
    };
    SpherePoint::on_equator(&x, sphere.gram())
}

fn frame_json(f: &SubbundleFrame) -> Value {
    let cols: Vec<Value> = (0..f.dim()).map(|j| vec_json(&f.basis.column(j).into_owned())).collect();
    json!({
        "label": f.label.to_string(),
        "dimension": f.dim(),
        "theoretical_exponent": f.theoretical_exponent,
        "lambda": f.lambda,
        "basis": cols,
    })
}

fn selgrade(ctx: &mut Ctx, lambda: f64, base_point: &[f64]) -> Result<Outcome> {
    let sd = ctx.spectral()?.clone();
    let i0 = lambda_index(&sd, lambda)?;
    let sphere = PoincareSphere::adapted(ctx.sys.clone(), &sd)?;
    let base = base_on_equator(&sd, i0, base_point, &sphere)?;
    let frames = selgrade_frames(&ctx.sys, &sd, i0, &base, &ctx.u)?;
    let n = ctx.n();
    let mut o = Outcome::new(Value::Null);
    let total: usize = frames.iter().map(|f| f.dim()).sum();
    o.assertions.push(Assertion::new(
        "frame dimensions sum to n",
        total == n,
        format!("{total} vs {n}"),
    ));
    let mut csv = String::from("label,column,theoretical");
    for i in 1..=n + 1 {
        let _ = write!(csv, ",w{i}");
    }
    csv.push('\n');
    for f in &frames {
        for j in 0..f.dim() {
            let _ = writeln!(
                csv,
                "{},{j},{},{}",
                f.label,
                fmt12(f.theoretical_exponent),
                fmt_vec(f.basis.column(j).into_owned().as_slice(), ",")
            );
        }
    }
    o.results = json!({
        "lambda_i0": sd.exponents[i0],
        "base_point": vec_json(base.coords()),
        "frames": frames.iter().map(frame_json).collect::<Vec<_>>(),
        "kappa_minus": kappa_minus(&frames),
    });
    o.files.push(("selgrade.csv".into(), csv));
    Ok(o)
}

/// Base points of _S L(λ)^∞: the given ones, or `samples` points of the circle through the
/// first two basis vectors (a single point when L(λ) is a line).
fn exponent_bases(sd: &SpectralData, i0: usize, given: &[Vec<f64>], samples: usize, sphere: &PoincareSphere) -> Result<Vec<SpherePoint>> {
    if !given.is_empty() {
        return given.iter().map(|x| base_on_equator(sd, i0, x, sphere)).collect();
    }
    let q = &sd.spaces[i0];
    if q.ncols() == 1 {
        return Ok(vec![SpherePoint::on_equator(&q.column(0).into_owned(), sphere.gram())?]);
    }
    (0..samples)
        .map(|k| {
            let th = TAU * k as f64 / samples as f64;
            let x = q.column(0) * th.cos() + q.column(1) * th.sin();
            SpherePoint::on_equator(&x, sphere.gram())
        })
        .collect()
}

#[derive(Serialize)]
struct ExponentRow {
    base_point: Vec<f64>,
    label: String,
    theoretical: f64,
    forward: f64,
    backward: f64,
    abs_error: f64,
}

fn exponents(
    ctx: &mut Ctx,
    lambda: f64,
    base_points: &[Vec<f64>],
    samples: usize,
    horizon: f64,
    tolerance: f64,
    reproject: bool,
) -> Result<Outcome> {
    let sd = ctx.spectral()?.clone();
    let i0 = lambda_index(&sd, lambda)?;
    let sphere = PoincareSphere::adapted(ctx.sys.clone(), &sd)?;
    let bases = exponent_bases(&sd, i0, base_points, samples, &sphere)?;
    let u = &ctx.u;
    let sys = &ctx.sys;
    let per_base: Vec<Vec<ExponentRow>> = bases
        .par_iter()
        .map(|b| -> Result<Vec<ExponentRow>> {
            let frames = selgrade_frames(sys, &sd, i0, b, u)?;
            frames
                .par_iter()
                .map(|f| {
                    let w = f.generic_vector(sphere.gram());
                    let rp = reproject.then_some(Reprojection {
                        spectral: &sd,
                        i0,
                        label: f.label,
                    });
                    let fw = exponent_estimate(&sphere, &w, u, horizon, Direction::Forward, rp)?;
                    let bw = exponent_estimate(&sphere, &w, u, horizon, Direction::Backward, rp)?;
                    let th = f.theoretical_exponent;
                    Ok(ExponentRow {
                        base_point: b.coords().iter().copied().collect(),
                        label: f.label.to_string(),
                        theoretical: th,
                        forward: fw,
                        backward: bw,
                        abs_error: (fw - th).abs().max((bw - th).abs()),
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let rows: Vec<ExponentRow> = per_base.into_iter().flatten().collect();
    let mut o = Outcome::new(Value::Null);
    let mut csv =
        String::from("base_point,subbundle_label,theoretical,estimated_T50_forward,estimated_T50_backward,abs_error\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            fmt_vec(&r.base_point, " "),
            r.label,
            fmt12(r.theoretical),
            fmt12(r.forward),
            fmt12(r.backward),
            fmt12(r.abs_error)
        );
    }
    let worst = rows.iter().map(|r| r.abs_error).fold(0.0, f64::max);
    o.assertions.push(Assertion::new(
        format!("estimated exponents within {tolerance} of theory"),
        worst <= tolerance,
        format!("max abs error {worst:e} over {} estimates", rows.len()),
    ));
    let mut table: BTreeMap<String, f64> = BTreeMap::new();
    for r in &rows {
        table.insert(r.label.clone(), r.theoretical);
    }
    o.results = json!({
        "lambda_i0": sd.exponents[i0],
        "horizon": horizon,
        "reproject": reproject,
        "theoretical": table,
        "rows": rows,
        "max_abs_error": worst,
    });
    o.files.push(("exponents.csv".into(), csv));
    Ok(o)
}

#[allow(clippy::too_many_arguments)]
fn verify_stable(
    ctx: &mut Ctx,
    lambda: f64,
    base_point: &[f64],
    delta: f64,
    alpha: f64,
    horizon: f64,
    divergence: &[f64],
    tau: f64,
) -> Result<Outcome> {
    let sd = ctx.spectral()?.clone();
    let i0 = lambda_index(&sd, lambda)?;
    let sphere = PoincareSphere::adapted(ctx.sys.clone(), &sd)?;
    let base = base_on_equator(&sd, i0, base_point, &sphere)?;
    let frames = selgrade_frames(&ctx.sys, &sd, i0, &base, &ctx.u)?;
    let params = StableCheck {
        delta,
        alpha,
        horizon,
        seed: ctx.sc.seed,
    };
    let rep = stable_convergence_check(&sphere, &frames, &ctx.u, params)?;
    let mut o = Outcome::new(Value::Null);
    o.assertions.push(Assertion::new(
        "weighted sphere distance decreases below 1e-3",
        rep.converged,
        format!("final {:e}", rep.weighted_distances.last().copied().unwrap_or(f64::NAN)),
    ));
    if let Some(d) = rep.chart_diverged {
        o.assertions.push(Assertion::new(
            "chart preimage diverges",
            d,
            format!("final norm {:?}", rep.chart_final_norm),
        ));
    }
    let mut csv = String::from("t,weighted_distance\n");
    for (t, d) in rep.times.iter().zip(&rep.weighted_distances) {
        let _ = writeln!(csv, "{},{}", fmt12(*t), fmt12(*d));
    }
    let mut results = json!({"stable": rep});
    if !divergence.is_empty() {
        if !ctx.u_is_zero() {
            return Err(Error::input("the divergence example uses u ≡ 0; set a zero control"));
        }
        let plain = PoincareSphere::new(ctx.sys.clone());
        let z0 = DVector::from_column_slice(divergence);
        let dv = eigen_divergence_example(&plain, &z0, tau, alpha, horizon)?;
        o.assertions.push(Assertion::new(
            "eigenvector seeds converge on the sphere",
            dv.converged,
            "",
        ));
        o.assertions.push(Assertion::new(
            "eigenvector seeds diverge in the chart",
            dv.diverged,
            format!("growth rate {}", dv.chart_growth_rate),
        ));
        results["divergence"] = serde_json::to_value(&dv).expect("serializes");
    }
    o.results = results;
    o.files.push(("verify-stable.csv".into(), csv));
    Ok(o)
}

/// Interval of equilibria −c/a of ẋᵢ = a xᵢ + c, c ∈ {(Bu)ᵢ : u ∈ U}; this is the
/// closure of D₀ along axis i when A is diagonal with a ≠ 0.
fn axis_oracle(sys: &LinearSystem, i: usize) -> Option<(f64, f64)> {
    let a = sys.a()[(i, i)];
    if a == 0.0 {
        return None;
    }
    let b = sys.b().row(i);
    let cs: Vec<f64> = sys.range().vertices().iter().map(|v| (b * v)[(0, 0)]).collect();
    let (lo, hi) = cs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), c| (l.min(*c), h.max(*c)));
    let (p, q) = (-lo / a, -hi / a);
    Some((p.min(q), p.max(q)))
}

fn is_diagonal(a: &DMatrix<f64>) -> bool {
    (0..a.nrows()).all(|i| (0..a.ncols()).all(|j| i == j || a[(i, j)] == 0.0))
}

fn reach(ctx: &mut Ctx, cells: usize, radius: f64, horizon: f64, tau: f64) -> Result<Outcome> {
    let n = ctx.n();
    let sd = ctx.spectral()?.clone();
    let grid = Grid::cube(n, radius, cells)?;
    let res = control_set_d0(&ctx.sys, &sd, &grid, horizon, tau, &ControlModel::Hull)?;
    let mut o = Outcome::new(Value::Null);
    let mut extents = Vec::new();
    for axis in 0..n {
        let e = grid.extent(&res.set.cells, axis);
        extents.push(json!(e.map(|(a, b)| [a, b])));
        if !is_diagonal(ctx.sys.a()) {
            continue;
        }
        let (Some((lo, hi)), Some(oracle)) = (e, axis_oracle(&ctx.sys, axis)) else {
            continue;
        };
        if oracle.0 < -radius || oracle.1 > radius {
            continue;
        }
        let w = grid.width(axis);
        // extents are cell centers, so half a cell of the tolerance is discretization
        let err = (lo - oracle.0).abs().max((hi - oracle.1).abs());
        o.assertions.push(Assertion::new(
            format!("D0 extent along x{} matches the 1-D oracle within one cell", axis + 1),
            err <= w,
            format!("grid [{}, {}] vs oracle [{}, {}], cell {}", fmt12(lo), fmt12(hi), fmt12(oracle.0), fmt12(oracle.1), fmt12(w)),
        ));
    }
    if let Some(pc) = &res.product_check {
        o.assertions.push(Assertion::new(
            "D0 consistent with the product of its projections",
            pc.consistent_fraction > 0.99,
            format!("{} of {} pairs", fmt12(pc.consistent_fraction), pc.pairs),
        ));
    }
    let mut buf = Vec::new();
    write_cells_csv(&mut buf, n, &grid_rows(&grid, &res.set, "control_set"))?;
    o.results = json!({
        "cells_per_axis": cells,
        "radius": radius,
        "cell_width": grid.width(0),
        "horizon": horizon,
        "tau": tau,
        "d0_cells": res.set.len(),
        "d0_escape_cells": res.set.escape.len(),
        "reachable_cells": res.reachable.len(),
        "controllable_cells": res.controllable.len(),
        "extents": extents,
        "product_check": res.product_check,
        "outer_approximation": res.set.outer,
    });
    o.files.push(("reach.csv".into(), String::from_utf8(buf).expect("utf-8")));
    ctx.d0 = Some((grid, res.set));
    Ok(o)
}

#[allow(clippy::too_many_arguments)]
fn chain(
    ctx: &mut Ctx,
    cells: usize,
    radius: f64,
    tau: f64,
    eps_factor: f64,
    levels: usize,
    sphere_sets: bool,
    mesh_level: usize,
    sphere_tau: f64,
) -> Result<Outcome> {
    let n = ctx.n();
    let sd = ctx.spectral()?.clone();
    let grid = Grid::cube(n, radius, cells)?;
    let params = ChainParams {
        tau,
        eps: eps_factor * grid.diameter(),
        controls: ctx.sys.range().dense_sample(levels),
    };
    let sets = chain_control_sets_grid(&ctx.sys, &grid, &params)?;
    let mut o = Outcome::new(Value::Null);
    let hyperbolic = sd.center_index.is_none();
    if hyperbolic {
        o.assertions.push(Assertion::new(
            "hyperbolic system has exactly one chain control set",
            sets.len() == 1,
            format!("{} sets", sets.len()),
        ));
    }
    let mut d0_distance = None;
    if let Some((g, d0)) = &ctx.d0 {
        if g == &grid && hyperbolic && sets.len() == 1 {
            let h = grid.hausdorff_cells(&sets[0].cells, &d0.cells);
            d0_distance = h;
            o.assertions.push(Assertion::new(
                "chain control set equals closure(D0) within 2 cells",
                h.is_some_and(|h| h <= 2),
                format!("Hausdorff distance {h:?} cells"),
            ));
        }
    }
    let mut rows = Vec::new();
    for (k, s) in sets.iter().enumerate() {
        rows.extend(grid_rows(&grid, s, &format!("chain_control_set:{k}")));
    }
    let mut buf = Vec::new();
    write_cells_csv(&mut buf, n, &rows)?;
    o.files.push(("chain.csv".into(), String::from_utf8(buf).expect("utf-8")));
    let mut results = json!({
        "cells_per_axis": cells,
        "tau": tau,
        "eps": params.eps,
        "controls": params.controls.len(),
        "sets": sets.iter().map(|s| json!({
            "cells": s.len(),
            "escape_cells": s.escape.len(),
            "extents": (0..n).map(|a| grid.extent(&s.cells, a).map(|(x, y)| [x, y])).collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
        "hausdorff_cells_to_d0": d0_distance,
    });

    let mut mesh_out = None;
    if sphere_sets && n == 2 {
        let sphere = PoincareSphere::new(ctx.sys.clone());
        let mesh = SphereMesh::full_s2(mesh_level, sphere.gram())?;
        let mp = ChainParams {
            tau: sphere_tau,
            eps: mesh.cell_diameter(),
            controls: params.controls.clone(),
        };
        let ms = chain_control_sets_mesh(&sphere, &mesh, &mp)?;
        let objects = equilibria_at_infinity(&ctx.sys, &sd)?;
        for ob in objects.iter().filter(|o| o.kind == InfinityKind::Equilibrium) {
            let p = ob.point().expect("equilibrium");
            let near = ms.sets.iter().any(|s| {
                s.region == Region::Equator
                    && s.set.cells.iter().any(|&c| sphere.distance(&mesh.point(c), &p) <= 2.0 * mesh.cell_diameter())
            });
            o.assertions.push(Assertion::new(
                format!("equilibrium at infinity {} lies in an equator chain set", fmt_vec(p.coords().as_slice(), " ")),
                near,
                "",
            ));
        }
        let mut rows = Vec::new();
        for (k, s) in ms.sets.iter().enumerate() {
            let region = match s.region {
                Region::Equator => "equator",
                Region::Central => "central",
            };
            for &c in &s.set.cells {
                rows.push((
                    c,
                    mesh.point(c).coords().iter().copied().collect(),
                    format!("sphere_chain_set:{k}"),
                    region.to_string(),
                ));
            }
        }
        let mut buf = Vec::new();
        write_cells_csv(&mut buf, n + 1, &rows)?;
        o.files.push(("chain_sphere.csv".into(), String::from_utf8(buf).expect("utf-8")));
        results["sphere"] = json!({
            "mesh": ms.mesh,
            "mesh_level": mesh_level,
            "cell_diameter": ms.cell_diameter,
            "tau": sphere_tau,
            "sets": ms.sets.iter().map(|s| json!({
                "vertices": s.set.len(),
                "region": s.region,
                "antipode": s.antipode,
                "self_antipodal": s.self_antipodal,
                "centroid": s.centroid,
            })).collect::<Vec<_>>(),
        });
        mesh_out = Some((mesh, ms));
    } else if sphere_sets {
        results["sphere"] = json!("sphere meshes are available for n = 2 only");
    }
    o.results = results;
    ctx.chain = Some(ChainOutput {
        grid,
        sets,
        mesh: mesh_out,
    });
    Ok(o)
}

/// Coarse grid used for lifted chain control sets when no chain analysis ran.
fn coarse_cells(n: usize) -> usize {
    match n {
        1 => 201,
        2 => 101,
        3 => 31,
        _ => 15,
    }
}

fn build_catalog(ctx: &mut Ctx, cell: f64) -> Result<(LimitCatalog, Value)> {
    let n = ctx.n();
    let sd = ctx.spectral()?.clone();
    let sphere = PoincareSphere::new(ctx.sys.clone());
    let mut cat = LimitCatalog::default();
    cat.add_infinity_objects(&equilibria_at_infinity(&ctx.sys, &sd)?, cell);
    let mut sources = vec![json!("objects at infinity")];
    if ctx.chain.is_none() {
        let grid = Grid::cube(n, 2.0, coarse_cells(n))?;
        let params = ChainParams {
            tau: 1.5,
            eps: grid.diameter(),
            controls: ctx.sys.range().dense_sample(9),
        };
        let sets = chain_control_sets_grid(&ctx.sys, &grid, &params)?;
        let mesh = if n == 2 {
            let mesh = SphereMesh::full_s2(4, sphere.gram())?;
            let mut mp = ChainParams::default_for(&ctx.sys, mesh.cell_diameter());
            mp.tau = 1.0;
            mp.eps = mesh.cell_diameter();
            let ms = chain_control_sets_mesh(&sphere, &mesh, &mp)?;
            Some((mesh, ms))
        } else {
            None
        };
        ctx.chain = Some(ChainOutput { grid, sets, mesh });
    }
    let ch = ctx.chain.as_ref().unwrap();
    for (k, s) in ch.sets.iter().enumerate() {
        cat.add_grid_set(&sphere, &ch.grid, s, &format!("chain_control_set:{k}"))?;
    }
    sources.push(json!(format!("{} grid chain control sets ({} cells per axis)", ch.sets.len(), ch.grid.cells_per_axis()[0])));
    if let Some((mesh, ms)) = &ch.mesh {
        cat.add_mesh_sets(mesh, ms);
        sources.push(json!(format!("{} sphere chain sets ({})", ms.sets.len(), ms.mesh)));
    }
    Ok((cat, json!(sources)))
}

/// Random piecewise-constant control with unit segments on [0, t_total].
fn random_control(rng: &mut ChaCha8Rng, sys: &LinearSystem, t_total: f64) -> Result<ControlSignal> {
    let verts = sys.range().vertices();
    let k = t_total.ceil() as usize;
    let mut values = Vec::with_capacity(k);
    for _ in 0..k {
        let w: Vec<f64> = verts.iter().map(|_| -rng.random::<f64>().ln()).collect();
        let total: f64 = w.iter().sum();
        let mut v = DVector::zeros(sys.m());
        for (vi, wi) in verts.iter().zip(&w) {
            v += vi * (wi / total);
        }
        values.push(v.iter().copied().collect());
    }
    ControlSignal::piecewise((1..k).map(|i| i as f64).collect(), values)
}

fn random_sphere_point(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    loop {
        // Box–Muller pairs give an isotropic direction
        let g = DVector::from_fn(n + 1, |_, _| {
            let (a, b): (f64, f64) = (rng.random(), rng.random());
            (-2.0 * (1.0 - a).ln()).sqrt() * (TAU * b).cos()
        });
        let r = g.norm();
        if r > 1e-6 && (g[n] / r).abs() > 1e-6 {
            return g / r;
        }
    }
}

fn limits(ctx: &mut Ctx, samples: usize, t_total: f64, t_tail: f64, cell: f64, max_inconclusive: f64) -> Result<Outcome> {
    let n = ctx.n();
    let (cat, sources) = build_catalog(ctx, cell)?;
    let sphere = PoincareSphere::new(ctx.sys.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.sc.seed);
    let mut cases = Vec::with_capacity(samples);
    for _ in 0..samples {
        let s0 = random_sphere_point(&mut rng, n);
        let u = random_control(&mut rng, &ctx.sys, t_total)?;
        cases.push((s0, u));
    }
    let results: Vec<_> = cases
        .par_iter()
        .map(|(s0, u)| {
            let s0 = sphere.project(s0)?;
            limit_set(&sphere, &s0, u, t_tail, t_total, &cat)
        })
        .collect::<Result<_>>()?;
    let mut csv = String::from("sample,nearest,region,distance,tail_diameter,threshold,matched,inconclusive");
    for i in 1..=n + 1 {
        let _ = write!(csv, ",f{i}");
    }
    csv.push('\n');
    let mut unmatched = Vec::new();
    let mut inconclusive = 0;
    for (k, r) in results.iter().enumerate() {
        let d = r.distances.iter().copied().fold(f64::INFINITY, f64::min);
        let region = match r.region {
            Some(Region::Equator) => "equator",
            Some(Region::Central) => "central",
            None => "",
        };
        let _ = writeln!(
            csv,
            "{k},{},{region},{},{},{},{},{},{}",
            r.nearest.as_deref().unwrap_or(""),
            fmt12(d),
            fmt12(r.tail_diameter),
            fmt12(r.threshold),
            r.matched,
            r.inconclusive,
            fmt_vec(&r.final_point, ",")
        );
        if r.inconclusive {
            inconclusive += 1;
        } else if !r.matched {
            unmatched.push(k);
        }
    }
    let frac = inconclusive as f64 / samples as f64;
    let mut o = Outcome::new(Value::Null);
    o.assertions.push(Assertion::new(
        "every settled limit tail lies within 2 cells of a catalogued set",
        unmatched.is_empty(),
        format!("unmatched samples {unmatched:?}"),
    ));
    o.assertions.push(Assertion::new(
        format!("inconclusive fraction at most {max_inconclusive}"),
        frac <= max_inconclusive,
        format!("{inconclusive} of {samples}"),
    ));
    let mut by_set: BTreeMap<String, usize> = BTreeMap::new();
    for r in &results {
        *by_set.entry(r.nearest.clone().unwrap_or_default()).or_insert(0) += 1;
    }
    o.results = json!({
        "samples": samples,
        "t_total": t_total,
        "t_tail": t_tail,
        "catalog": sources,
        "catalog_entries": cat.entries.iter().map(|e| &e.name).collect::<Vec<_>>(),
        "classified": by_set,
        "inconclusive": inconclusive,
        "unmatched": unmatched,
    });
    o.files.push(("limits.csv".into(), csv));
    Ok(o)
}

fn portrait_data(ctx: &mut Ctx, extra: Vec<Vec<DVector<f64>>>) -> Result<PortraitData> {
    let n = ctx.n();
    let sd = ctx.spectral()?.clone();
    let objects = equilibria_at_infinity(&ctx.sys, &sd)?;
    let mut data = PortraitData {
        title: format!("{}: trajectories on the Poincaré sphere", ctx.sc.name),
        dim: n + 1,
        sphere: true,
        ..Default::default()
    };
    data.trajectories = ctx.trajectories.clone();
    data.trajectories.extend(extra);
    for ob in &objects {
        match ob.kind {
            InfinityKind::Equilibrium => data.equilibria.push(ob.basis.column(0).into_owned()),
            _ => {
                // the first two basis vectors span a great circle of the object
                let (p, q) = (ob.basis.column(0), ob.basis.column(1));
                let circle: Vec<DVector<f64>> = (0..=128)
                    .map(|k| {
                        let th = TAU * k as f64 / 128.0;
                        p * th.cos() + q * th.sin()
                    })
                    .collect();
                data.trajectories.push(circle);
            }
        }
    }
    let sphere = PoincareSphere::new(ctx.sys.clone());
    if let Some(ch) = &ctx.chain {
        if let Some((mesh, ms)) = &ch.mesh {
            for (k, s) in ms.sets.iter().enumerate() {
                data.sets.push(ShadedSet {
                    label: format!("sphere chain set {k}"),
                    points: s.set.cells.iter().map(|&c| mesh.point(c).into_coords()).collect(),
                    radius: 0.5 * mesh.cell_diameter(),
                });
            }
        }
    }
    if let Some((grid, d0)) = &ctx.d0 {
        let points = d0
            .cells
            .iter()
            .map(|&c| sphere.chart_to_sphere(&grid.center(c)).map(SpherePoint::into_coords))
            .collect::<Result<Vec<_>>>()?;
        data.sets.push(ShadedSet {
            label: "D0 (upper hemisphere)".into(),
            points,
            radius: 0.5 * grid.width(0),
        });
    }
    Ok(data)
}

fn portrait(ctx: &mut Ctx, coords: &[usize], count: usize, t_end: f64) -> Result<Outcome> {
    let n = ctx.n();
    let sphere = PoincareSphere::new(ctx.sys.clone());
    let starts = default_initial(&sphere, count)?;
    let opts = FlowOptions::default();
    let extra: Vec<Vec<DVector<f64>>> = starts
        .par_iter()
        .map(|s| {
            let tr = sphere.trajectory(s, &ctx.u, t_end, 0.05, &opts)?;
            Ok(tr.into_iter().map(|(_, p)| p.into_coords()).collect())
        })
        .collect::<Result<_>>()?;
    let coords = if coords.is_empty() { default_coords(n) } else { coords.to_vec() };
    let data = portrait_data(ctx, extra)?;
    let svg = emit_portrait(&data, Some(&Projection { coords: coords.clone() }))?;
    let mut o = Outcome::new(json!({
        "coords": coords,
        "trajectories": data.trajectories.len(),
        "equilibria": data.equilibria.len(),
        "shaded_sets": data.sets.len(),
    }));
    o.files.push((format!("portrait_{}.svg", ctx.sc.name), svg));
    Ok(o)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::parse_scenario;

    #[test]
    fn oracle_intervals() {
        let sc = crate::scenario::presets::get("example1").unwrap();
        let sys = sc.linear_system().unwrap();
        assert_eq!(axis_oracle(&sys, 0), Some((-1.0, 1.0)));
        assert_eq!(axis_oracle(&sys, 1), Some((-1.0, 1.0)));
    }

    #[test]
    fn empty_scenario_writes_echo_only() {
        let sc = parse_scenario(
            r#"{"name": "echo", "system": {"a": [[-1]], "b": [[1]], "u": {"type": "box", "lower": [-1], "upper": [1]}}}"#,
        )
        .unwrap();
        let dir = std::env::temp_dir().join(format!("pflow-echo-{}", std::process::id()));
        let rep = run(&sc, &dir).unwrap();
        assert!(rep.passed && rep.analyses.is_empty() && rep.files.is_empty());
        let text = std::fs::read_to_string(dir.join("report.json")).unwrap();
        let v: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["scenario"]["name"], "echo");
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn failures_are_recorded_and_the_rest_runs() {
        let sc = parse_scenario(
            r#"{"name": "bad", "system": {"a": [[1, 0], [0, -1]], "b": [[1], [1]], "u": {"type": "box", "lower": [-1], "upper": [1]}},
                "analyses": [{"kind": "selgrade", "lambda": 3}, {"kind": "decompose"}]}"#,
        )
        .unwrap();
        let dir = std::env::temp_dir().join(format!("pflow-bad-{}", std::process::id()));
        let rep = run(&sc, &dir).unwrap();
        assert_eq!(rep.exit_code(), 1);
        assert_eq!(rep.analyses[0].kind, "decompose");
        assert!(rep.analyses[0].passed());
        assert!(!rep.analyses[1].ok && rep.analyses[1].error.is_some());
        std::fs::remove_dir_all(&dir).ok();
    }
}
