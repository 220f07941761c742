//! Linear control systems ẋ = Ax + Bu with bounded controls, piecewise
//! constant control signals, the exact solution cocycle, its bilinear lift
//! to ℝⁿ⁺¹ and the bounded solution of the hyperbolic part.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{matrix_exponential, LiftedGram, SpectralData};

/// Compact convex control range containing 0 in its interior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ControlRange {
    Box { lower: Vec<f64>, upper: Vec<f64> },
    /// Polytope given by halfspaces `normal·u ≤ offset` together with its vertices.
    Polytope {
        normals: Vec<Vec<f64>>,
        offsets: Vec<f64>,
        vertices: Vec<Vec<f64>>,
    },
}

impl ControlRange {
    pub fn symmetric_box(m: usize, radius: f64) -> Self {
        ControlRange::Box {
            lower: vec![-radius; m],
            upper: vec![radius; m],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ControlRange::Box { lower, .. } => lower.len(),
            ControlRange::Polytope { vertices, .. } => vertices.first().map_or(0, |v| v.len()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ControlRange::Box { lower, upper } => {
                if lower.len() != upper.len() {
                    return Err(Error::dim("control box bounds", lower.len(), upper.len()));
                }
                for (l, u) in lower.iter().zip(upper) {
                    if !(l.is_finite() && u.is_finite()) {
                        return Err(Error::input("control range must be compact"));
                    }
                    if !(*l < 0.0 && 0.0 < *u) {
                        return Err(Error::input("0 must lie in the interior of the control range"));
                    }
                }
                Ok(())
            }
            ControlRange::Polytope {
                normals,
                offsets,
                vertices,
            } => {
                let m = self.dim();
                if normals.len() != offsets.len() || normals.is_empty() || vertices.is_empty() {
                    return Err(Error::input("polytope needs matching halfspaces and vertices"));
                }
                if normals.iter().chain(vertices.iter()).any(|v| v.len() != m) {
                    return Err(Error::dim("polytope vectors", m, "mixed"));
                }
                if offsets.iter().any(|o| !(*o > 0.0)) {
                    return Err(Error::input("0 must lie in the interior of the control range"));
                }
                for v in vertices {
                    if !self.contains(v, 1e-9) {
                        return Err(Error::input("polytope vertex violates its halfspaces"));
                    }
                }
                Ok(())
            }
        }
    }

    pub fn contains(&self, u: &[f64], tol: f64) -> bool {
        match self {
            ControlRange::Box { lower, upper } => u
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(x, (l, h))| *x >= l - tol && *x <= h + tol),
            ControlRange::Polytope { normals, offsets, .. } => normals
                .iter()
                .zip(offsets)
                .all(|(nrm, o)| nrm.iter().zip(u).map(|(a, b)| a * b).sum::<f64>() <= o + tol),
        }
    }

    /// Extremal points of the range (box corners or polytope vertices).
    pub fn vertices(&self) -> Vec<DVector<f64>> {
        match self {
            ControlRange::Box { lower, upper } => {
                let m = lower.len();
                (0..(1usize << m))
                    .map(|mask| {
                        DVector::from_fn(m, |i, _| if mask >> i & 1 == 1 { upper[i] } else { lower[i] })
                    })
                    .collect()
            }
            ControlRange::Polytope { vertices, .. } => {
                vertices.iter().map(|v| DVector::from_vec(v.clone())).collect()
            }
        }
    }

    /// Vertices of the range plus the zero control (bang-bang and coasting).
    pub fn sample(&self) -> Vec<DVector<f64>> {
        let mut s = self.vertices();
        s.push(DVector::zeros(self.dim()));
        s
    }

    /// `k` equally spaced levels per axis for boxes; for polytopes, `k` points on each
    /// segment from 0 to a vertex.
    pub fn dense_sample(&self, k: usize) -> Vec<DVector<f64>> {
        let k = k.max(2);
        let frac = |j: usize| j as f64 / (k - 1) as f64;
        match self {
            ControlRange::Box { lower, upper } => {
                let m = lower.len();
                (0..k.pow(m as u32))
                    .map(|mut idx| {
                        DVector::from_fn(m, |i, _| {
                            let j = idx % k;
                            idx /= k;
                            lower[i] + frac(j) * (upper[i] - lower[i])
                        })
                    })
                    .collect()
            }
            ControlRange::Polytope { .. } => {
                let mut s = vec![DVector::zeros(self.dim())];
                for v in self.vertices() {
                    s.extend((1..k).map(|j| &v * frac(j)));
                }
                s
            }
        }
    }

    /// Largest Euclidean norm of an admissible control value.
    pub fn max_norm(&self) -> f64 {
        self.vertices().iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn negated(&self) -> Self {
        match self {
            ControlRange::Box { lower, upper } => ControlRange::Box {
                lower: upper.iter().map(|x| -x).collect(),
                upper: lower.iter().map(|x| -x).collect(),
            },
            ControlRange::Polytope {
                normals,
                offsets,
                vertices,
            } => ControlRange::Polytope {
                normals: normals.iter().map(|v| v.iter().map(|x| -x).collect()).collect(),
                offsets: offsets.clone(),
                vertices: vertices.iter().map(|v| v.iter().map(|x| -x).collect()).collect(),
            },
        }
    }
}

/// ẋ = Ax + Bu with u(t) in a compact convex range.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    range: ControlRange,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, range: ControlRange) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::dim("A", "square", format!("{}x{}", a.nrows(), a.ncols())));
        }
        let n = a.nrows();
        if n == 0 {
            return Err(Error::input("state dimension must be positive"));
        }
        if b.nrows() != n {
            return Err(Error::dim("rows of B", n, b.nrows()));
        }
        if b.ncols() != range.dim() {
            return Err(Error::dim("columns of B vs control range", range.dim(), b.ncols()));
        }
        if a.iter().chain(b.iter()).any(|x| !x.is_finite()) {
            return Err(Error::input("non-finite entries in A or B"));
        }
        range.validate()?;
        Ok(LinearSystem { a, b, range })
    }

    pub fn from_rows(a: &[Vec<f64>], b: &[Vec<f64>], range: ControlRange) -> Result<Self> {
        LinearSystem::new(matrix_from_rows(a, "A")?, matrix_from_rows(b, "B")?, range)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn range(&self) -> &ControlRange {
        &self.range
    }

    /// State dimension n.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Control dimension m.
    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// The same system with B replaced by `b`; used for projected forcing.
    pub fn with_input_matrix(&self, b: DMatrix<f64>) -> Self {
        LinearSystem {
            a: self.a.clone(),
            b,
            range: self.range.clone(),
        }
    }

    /// ẋ = −Ax − Bu: trajectories of this system run those of `self` backwards.
    pub fn time_reversed(&self) -> Self {
        LinearSystem {
            a: -&self.a,
            b: -&self.b,
            range: self.range.clone(),
        }
    }

    /// Generator of the lifted bilinear system for a fixed control value:
    /// [[A, Bv], [0, 0]].
    pub fn lifted_generator(&self, v: &DVector<f64>) -> DMatrix<f64> {
        let n = self.n();
        let mut g = DMatrix::zeros(n + 1, n + 1);
        g.view_mut((0, 0), (n, n)).copy_from(&self.a);
        let bv = &self.b * v;
        g.view_mut((0, n), (n, 1)).copy_from(&bv);
        g
    }

    /// Transition matrix of the lift over a time `dt` (either sign) with constant control `v`.
    pub fn lifted_transition(&self, v: &DVector<f64>, dt: f64) -> Result<DMatrix<f64>> {
        matrix_exponential(&self.lifted_generator(v), dt)
    }

    /// Generators A₀ = blockdiag(A, 0) and Aᵢ = [[0, bᵢ], [0, 0]] of the bilinear lift.
    pub fn bilinear_generators(&self) -> Vec<DMatrix<f64>> {
        let n = self.n();
        let mut gens = Vec::with_capacity(self.m() + 1);
        let mut a0 = DMatrix::zeros(n + 1, n + 1);
        a0.view_mut((0, 0), (n, n)).copy_from(&self.a);
        gens.push(a0);
        for i in 0..self.m() {
            let mut ai = DMatrix::zeros(n + 1, n + 1);
            ai.view_mut((0, n), (n, 1)).copy_from(&self.b.column(i));
            gens.push(ai);
        }
        gens
    }

    /// Rank of the Kalman controllability matrix [B, AB, …, Aⁿ⁻¹B].
    pub fn kalman_rank(&self) -> usize {
        let n = self.n();
        let m = self.m();
        let mut k = DMatrix::zeros(n, n * m);
        let mut blk = self.b.clone();
        for i in 0..n {
            k.view_mut((0, i * m), (n, m)).copy_from(&blk);
            blk = &self.a * blk;
        }
        k.rank(1e-10 * k.amax().max(1.0))
    }
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, |x| x.len());
    if rows.iter().any(|x| x.len() != c) {
        return Err(Error::dim(format!("row length of {what}"), c, "ragged rows"));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

/// Piecewise-constant control signal.
///
/// Aperiodic signals hold `values[0]` before the first breakpoint and the
/// last value after the last one. Periodic signals repeat the pattern on
/// `[0, period)`, starting with `values[0]` at every multiple of the period;
/// their shift is stored as a phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlSignal {
    breakpoints: Vec<f64>,
    values: Vec<Vec<f64>>,
    period: Option<f64>,
    #[serde(default)]
    phase: f64,
}

/// A stretch of constant control: `duration` may be negative when traversing backwards.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub value: DVector<f64>,
    pub duration: f64,
}

impl ControlSignal {
    pub fn constant(v: Vec<f64>) -> Self {
        ControlSignal {
            breakpoints: Vec::new(),
            values: vec![v],
            period: None,
            phase: 0.0,
        }
    }

    pub fn zero(m: usize) -> Self {
        Self::constant(vec![0.0; m])
    }

    pub fn piecewise(breakpoints: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        let s = ControlSignal {
            breakpoints,
            values,
            period: None,
            phase: 0.0,
        };
        s.check_shape()?;
        Ok(s)
    }

    /// Periodic signal; `breakpoints` are the interior switching times in (0, period).
    pub fn periodic(period: f64, breakpoints: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::input("period must be positive"));
        }
        if breakpoints.iter().any(|&b| !(b > 0.0 && b < period)) {
            return Err(Error::input("periodic breakpoints must lie in (0, period)"));
        }
        let s = ControlSignal {
            breakpoints,
            values,
            period: Some(period),
            phase: 0.0,
        };
        s.check_shape()?;
        Ok(s)
    }

    fn check_shape(&self) -> Result<()> {
        if self.values.len() != self.breakpoints.len() + 1 {
            return Err(Error::dim(
                "control values",
                self.breakpoints.len() + 1,
                self.values.len(),
            ));
        }
        if self.breakpoints.iter().any(|b| !b.is_finite())
            || self.values.iter().flatten().any(|x| !x.is_finite())
        {
            return Err(Error::input("non-finite control data"));
        }
        if self.breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::input("breakpoints must be strictly increasing"));
        }
        let m = self.values[0].len();
        if self.values.iter().any(|v| v.len() != m) {
            return Err(Error::dim("control value length", m, "mixed"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn period(&self) -> Option<f64> {
        self.period
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn is_constant(&self) -> bool {
        self.values.iter().all(|v| v == &self.values[0])
    }

    /// Checks that every value lies in `range`.
    pub fn validate_in(&self, range: &ControlRange) -> Result<()> {
        if self.dim() != range.dim() {
            return Err(Error::dim("control value length", range.dim(), self.dim()));
        }
        if let Some(v) = self.values.iter().find(|v| !range.contains(v, 1e-12)) {
            return Err(Error::input(format!("control value {v:?} outside the control range")));
        }
        Ok(())
    }

    fn index_at(&self, t: f64) -> usize {
        match self.period {
            None => self.breakpoints.partition_point(|&b| b <= t),
            Some(p) => {
                let tau = (t + self.phase).rem_euclid(p);
                self.breakpoints.partition_point(|&b| b <= tau)
            }
        }
    }

    pub fn value_at(&self, t: f64) -> DVector<f64> {
        DVector::from_vec(self.values[self.index_at(t)].clone())
    }

    /// Right shift: (θ_t u)(s) = u(t + s).
    pub fn shift(&self, t: f64) -> ControlSignal {
        let mut out = self.clone();
        match self.period {
            None => {
                for b in &mut out.breakpoints {
                    *b -= t;
                }
            }
            Some(p) => out.phase = (self.phase + t).rem_euclid(p),
        }
        out
    }

    /// Switching times strictly inside (lo, hi), ascending.
    fn switches_between(&self, lo: f64, hi: f64) -> Vec<f64> {
        match self.period {
            None => self
                .breakpoints
                .iter()
                .copied()
                .filter(|&b| b > lo && b < hi)
                .collect(),
            Some(p) => {
                let mut out = Vec::new();
                let mut pattern = vec![0.0];
                pattern.extend_from_slice(&self.breakpoints);
                let k0 = ((lo + self.phase) / p).floor() as i64 - 1;
                let k1 = ((hi + self.phase) / p).ceil() as i64 + 1;
                for k in k0..=k1 {
                    for &b in &pattern {
                        let t = k as f64 * p + b - self.phase;
                        if t > lo && t < hi {
                            out.push(t);
                        }
                    }
                }
                out.sort_by(f64::total_cmp);
                out.dedup();
                out
            }
        }
    }

    /// Constant-control pieces traversed from `t0` to `t1` (backwards when `t1 < t0`).
    pub fn segments(&self, t0: f64, t1: f64) -> Vec<Segment> {
        if t0 == t1 {
            return Vec::new();
        }
        let (lo, hi) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
        let mut knots = vec![lo];
        knots.extend(self.switches_between(lo, hi));
        knots.push(hi);
        let mut segs: Vec<Segment> = knots
            .windows(2)
            .filter(|w| w[1] > w[0])
            .map(|w| Segment {
                value: self.value_at(0.5 * (w[0] + w[1])),
                duration: w[1] - w[0],
            })
            .collect();
        if t1 < t0 {
            segs.reverse();
            for s in &mut segs {
                s.duration = -s.duration;
            }
        }
        segs
    }

    /// Same pieces as [`segments`](Self::segments), split to at most `max_step` long.
    pub fn steps(&self, t0: f64, t1: f64, max_step: f64) -> Vec<Segment> {
        let mut out = Vec::new();
        for seg in self.segments(t0, t1) {
            let len = seg.duration.abs();
            let k = (len / max_step).ceil().max(1.0) as usize;
            let dt = seg.duration / k as f64;
            for _ in 0..k {
                out.push(Segment {
                    value: seg.value.clone(),
                    duration: dt,
                });
            }
        }
        out
    }
}

/// Memoizes lifted transition matrices for repeated (control value, step) pairs.
#[derive(Debug)]
pub struct TransitionCache<'a> {
    sys: &'a LinearSystem,
    cache: HashMap<(Vec<u64>, u64), DMatrix<f64>>,
}

impl<'a> TransitionCache<'a> {
    pub fn new(sys: &'a LinearSystem) -> Self {
        TransitionCache {
            sys,
            cache: HashMap::new(),
        }
    }

    pub fn get(&mut self, v: &DVector<f64>, dt: f64) -> Result<&DMatrix<f64>> {
        let key = (v.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), dt.to_bits());
        if !self.cache.contains_key(&key) {
            if self.cache.len() > 4096 {
                self.cache.clear();
            }
            let m = self.sys.lifted_transition(v, dt)?;
            self.cache.insert(key.clone(), m);
        }
        Ok(&self.cache[&key])
    }
}

/// Point (x, r) of the lifted state space ℝⁿ × ℝ.
#[derive(Clone, Debug, PartialEq)]
pub struct LiftedState {
    pub x: DVector<f64>,
    pub r: f64,
}

impl LiftedState {
    pub fn to_vector(&self) -> DVector<f64> {
        let n = self.x.len();
        DVector::from_fn(n + 1, |i, _| if i < n { self.x[i] } else { self.r })
    }

    pub fn from_vector(y: &DVector<f64>) -> Self {
        let n = y.len() - 1;
        LiftedState {
            x: y.rows(0, n).into_owned(),
            r: y[n],
        }
    }
}

fn check_dims(sys: &LinearSystem, x0: &DVector<f64>, u: &ControlSignal) -> Result<()> {
    if x0.len() != sys.n() {
        return Err(Error::dim("initial state", sys.n(), x0.len()));
    }
    if u.dim() != sys.m() {
        return Err(Error::dim("control value length", sys.m(), u.dim()));
    }
    Ok(())
}

/// φ¹(t, x₀, r, u) = (e^{At}x₀ + r∫₀ᵗ e^{A(t−σ)}Bu(σ)dσ, r), exact on each
/// constant-control piece.
pub fn lifted_flow(
    sys: &LinearSystem,
    t: f64,
    x0: &DVector<f64>,
    r: f64,
    u: &ControlSignal,
) -> Result<LiftedState> {
    check_dims(sys, x0, u)?;
    if !t.is_finite() {
        return Err(Error::input("time must be finite"));
    }
    let n = sys.n();
    let mut y = DVector::from_fn(n + 1, |i, _| if i < n { x0[i] } else { r });
    let mut cache = TransitionCache::new(sys);
    let mut elapsed = 0.0;
    for seg in u.segments(0.0, t) {
        let m = cache.get(&seg.value, seg.duration)?;
        y = m * y;
        elapsed += seg.duration;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Range {
                what: "state overflow".into(),
                time: elapsed,
            });
        }
    }
    let mut out = LiftedState::from_vector(&y);
    out.r = r;
    Ok(out)
}

/// Solution φ(t, x₀, u) of ẋ = Ax + Bu.
pub fn flow(sys: &LinearSystem, t: f64, x0: &DVector<f64>, u: &ControlSignal) -> Result<DVector<f64>> {
    Ok(lifted_flow(sys, t, x0, 1.0, u)?.x)
}

/// θ_t u.
pub fn shift(u: &ControlSignal, t: f64) -> ControlSignal {
    u.shift(t)
}

/// Value of the bounded solution together with its truncation bound.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundedSolution {
    pub value: DVector<f64>,
    /// Estimate C·e^{−αH} of the error from truncating the dichotomy integrals.
    pub truncation_bound: f64,
    /// Set when A has no nonzero exponent; the value is then zero.
    pub trivial_hyperbolic_part: bool,
}

/// Default dichotomy horizon 40/α.
pub fn default_horizon(spectral: &SpectralData) -> f64 {
    spectral.hyperbolic_gap().map_or(40.0, |a| 40.0 / a)
}

/// e(u,t) = ∫_{−∞}^{t} e^{A(t−σ)}π⁻Bu(σ)dσ − ∫_{t}^{∞} e^{A(t−σ)}π⁺Bu(σ)dσ,
/// truncated to |σ − t| ≤ H.
///
/// Each half is propagated in the direction in which it contracts, with
/// unit steps and re-projection onto L⁻ (resp. L⁺) after every step so that
/// rounding errors cannot seed the expanding directions.
pub fn bounded_solution(
    sys: &LinearSystem,
    spectral: &SpectralData,
    u: &ControlSignal,
    t: f64,
    horizon: f64,
) -> Result<BoundedSolution> {
    let n = sys.n();
    if spectral.dim() != n {
        return Err(Error::dim("spectral data", n, spectral.dim()));
    }
    if u.dim() != sys.m() {
        return Err(Error::dim("control value length", sys.m(), u.dim()));
    }
    if !(horizon > 0.0) {
        return Err(Error::Parameter("dichotomy horizon must be positive".into()));
    }
    let alpha = match spectral.hyperbolic_gap() {
        Some(a) if spectral.proj_hyperbolic.amax() > 0.0 => a,
        _ => {
            return Ok(BoundedSolution {
                value: DVector::zeros(n),
                truncation_bound: 0.0,
                trivial_hyperbolic_part: true,
            })
        }
    };

    let half = |proj: &DMatrix<f64>, from: f64| -> Result<DVector<f64>> {
        let part = sys.with_input_matrix(proj * sys.b());
        let mut cache = TransitionCache::new(&part);
        let mut y = DVector::zeros(n + 1);
        y[n] = 1.0;
        for seg in u.steps(from, t, 1.0) {
            let m = cache.get(&seg.value, seg.duration)?;
            let next = m * &y;
            let x = proj * next.rows(0, n);
            y.rows_mut(0, n).copy_from(&x);
        }
        Ok(y.rows(0, n).into_owned())
    };
    let minus = half(&spectral.proj_minus, t - horizon)?;
    let plus = half(&spectral.proj_plus, t + horizon)?;
    let value = minus + plus;

    let umax = sys.range().max_norm();
    let c = ((&spectral.proj_plus * sys.b()).norm() + (&spectral.proj_minus * sys.b()).norm()) * umax
        / alpha;
    Ok(BoundedSolution {
        value,
        truncation_bound: c * (-alpha * horizon).exp(),
        trivial_hyperbolic_part: false,
    })
}

/// Finite-time growth rate (1/T)·log‖φ¹(T, x₀, r, u)‖ of the lifted flow,
/// accumulated over unit steps with renormalization.
pub fn lifted_exponent(
    sys: &LinearSystem,
    gram: &LiftedGram,
    x0: &DVector<f64>,
    r: f64,
    u: &ControlSignal,
    horizon: f64,
) -> Result<f64> {
    check_dims(sys, x0, u)?;
    if gram.dim() != sys.n() + 1 {
        return Err(Error::dim("lifted gram", sys.n() + 1, gram.dim()));
    }
    if !(horizon > 0.0) {
        return Err(Error::Parameter("horizon must be positive".into()));
    }
    let n = sys.n();
    let mut y = DVector::from_fn(n + 1, |i, _| if i < n { x0[i] } else { r });
    let norm0 = gram.norm(&y);
    if norm0 == 0.0 {
        return Err(Error::input("zero initial condition has no growth rate"));
    }
    y /= norm0;
    let mut log_growth = 0.0;
    let mut cache = TransitionCache::new(sys);
    for seg in u.steps(0.0, horizon, 1.0) {
        y = cache.get(&seg.value, seg.duration)? * y;
        let ny = gram.norm(&y);
        if !(ny > 0.0 && ny.is_finite()) {
            return Err(Error::Range {
                what: "degenerate growth".into(),
                time: horizon,
            });
        }
        log_growth += ny.ln();
        y /= ny;
    }
    Ok(log_growth / horizon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{spectral_decompose, DEFAULT_GROUP_TOL};

    fn example1() -> LinearSystem {
        LinearSystem::from_rows(
            &[vec![1.0, 0.0], vec![0.0, -1.0]],
            &[vec![1.0], vec![1.0]],
            ControlRange::symmetric_box(1, 1.0),
        )
        .unwrap()
    }

    fn diag3() -> LinearSystem {
        LinearSystem::from_rows(
            &[vec![2.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, -1.0]],
            &[vec![1.0], vec![1.0], vec![1.0]],
            ControlRange::symmetric_box(1, 1.0),
        )
        .unwrap()
    }

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_vec(x.to_vec())
    }

    #[test]
    fn rejects_bad_dimensions() {
        let err = LinearSystem::from_rows(
            &[vec![1.0, 0.0], vec![0.0, -1.0]],
            &[vec![1.0], vec![1.0], vec![1.0]],
            ControlRange::symmetric_box(1, 1.0),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
        let err = LinearSystem::from_rows(
            &[vec![1.0]],
            &[vec![1.0]],
            ControlRange::Box {
                lower: vec![0.0],
                upper: vec![1.0],
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }

    #[test]
    fn zero_state_zero_control_is_equilibrium() {
        let sys = example1();
        let u = ControlSignal::zero(1);
        for t in [-3.0, 0.5, 10.0] {
            assert_eq!(flow(&sys, t, &v(&[0.0, 0.0]), &u).unwrap(), v(&[0.0, 0.0]));
        }
    }

    #[test]
    fn constant_control_closed_form() {
        let sys = example1();
        let u = ControlSignal::constant(vec![1.0]);
        for t in [0.5, 2.0, 10.0] {
            let x = flow(&sys, t, &v(&[0.0, 0.0]), &u).unwrap();
            assert!((x[1] - (1.0 - (-t).exp())).abs() < 1e-12);
            assert!((x[0] - (t.exp() - 1.0)).abs() < 1e-12 * t.exp());
        }
    }

    #[test]
    fn diagonal_decay() {
        let sys = diag3();
        let x = flow(&sys, 1.0, &v(&[0.0, 0.0, 1.0]), &ControlSignal::zero(1)).unwrap();
        assert!((x - v(&[0.0, 0.0, (-1.0f64).exp()])).norm() < 1e-15);
    }

    #[test]
    fn lift_identities() {
        let sys = diag3();
        let u = ControlSignal::piecewise(vec![0.3, 1.1], vec![vec![1.0], vec![-1.0], vec![0.5]]).unwrap();
        let x0 = v(&[0.2, -0.4, 1.0]);
        let at0 = lifted_flow(&sys, 2.0, &x0, 0.0, &u).unwrap();
        let free = flow(&sys, 2.0, &x0, &ControlSignal::zero(1)).unwrap();
        assert!((at0.x - free).norm() < 1e-12);
        assert_eq!(at0.r, 0.0);
        let at1 = lifted_flow(&sys, 2.0, &x0, 1.0, &u).unwrap();
        assert!((at1.x - flow(&sys, 2.0, &x0, &u).unwrap()).norm() < 1e-14);

        let zero_a = LinearSystem::from_rows(
            &[vec![0.0, 0.0], vec![0.0, 0.0]],
            &[vec![3.0], vec![-7.0]],
            ControlRange::symmetric_box(1, 1.0),
        )
        .unwrap();
        let s = lifted_flow(&zero_a, 5.0, &v(&[0.0, 0.0]), 2.0, &ControlSignal::zero(1)).unwrap();
        assert_eq!(s.x, v(&[0.0, 0.0]));
        assert_eq!(s.r, 2.0);
    }

    #[test]
    fn shift_examples() {
        let c = ControlSignal::constant(vec![0.3]);
        assert_eq!(c.shift(4.2).value_at(-1.0), c.value_at(-1.0));

        let u = ControlSignal::piecewise(vec![0.0, 1.0], vec![vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let s = u.shift(1.0);
        assert_eq!(s.breakpoints(), &[-1.0, 0.0]);
        for t in [-2.0, -0.5, 0.5, 3.0] {
            assert_eq!(s.value_at(t), u.value_at(t + 1.0));
        }

        let p = ControlSignal::periodic(2.0, vec![0.5], vec![vec![1.0], vec![-1.0]]).unwrap();
        let ps = p.shift(2.0);
        for k in 0..40 {
            let t = -5.0 + 0.25 * k as f64 + 0.01;
            assert_eq!(ps.value_at(t), p.value_at(t));
        }
        let ab = p.shift(0.3).shift(0.9);
        let direct = p.shift(1.2);
        for k in 0..40 {
            let t = -5.0 + 0.25 * k as f64 + 0.013;
            assert_eq!(ab.value_at(t), direct.value_at(t));
        }
    }

    #[test]
    fn periodic_segments_cover_interval() {
        let p = ControlSignal::periodic(1.0, vec![0.25], vec![vec![1.0], vec![-1.0]]).unwrap();
        let segs = p.segments(0.1, 2.6);
        let total: f64 = segs.iter().map(|s| s.duration).sum();
        assert!((total - 2.5).abs() < 1e-12);
        assert_eq!(segs[0].value, v(&[1.0]));
        assert!((segs[0].duration - 0.15).abs() < 1e-12);
        let back = p.segments(2.6, 0.1);
        assert!(back.iter().all(|s| s.duration < 0.0));
        assert_eq!(back.len(), segs.len());
    }

    #[test]
    fn validates_values_in_range() {
        let u = ControlSignal::constant(vec![1.5]);
        assert!(u.validate_in(&ControlRange::symmetric_box(1, 1.0)).is_err());
        assert!(ControlSignal::piecewise(vec![1.0, 0.5], vec![vec![0.0]; 3]).is_err());
        assert!(ControlSignal::piecewise(vec![1.0], vec![vec![0.0]; 3]).is_err());
    }

    #[test]
    fn overflow_reports_time() {
        let sys = LinearSystem::from_rows(&[vec![50.0]], &[vec![1.0]], ControlRange::symmetric_box(1, 1.0))
            .unwrap();
        let u = ControlSignal::piecewise((1..40).map(|k| k as f64).collect(), vec![vec![0.0]; 40]).unwrap();
        match flow(&sys, 40.0, &v(&[1.0]), &u) {
            Err(Error::Range { time, .. }) => assert!(time > 10.0 && time < 16.0),
            other => panic!("expected range error, got {other:?}"),
        }
    }

    #[test]
    fn bounded_solution_examples() {
        let sys = example1();
        let sd = spectral_decompose(sys.a(), DEFAULT_GROUP_TOL).unwrap();
        let h = default_horizon(&sd);
        let zero = bounded_solution(&sys, &sd, &ControlSignal::zero(1), 0.7, h).unwrap();
        assert_eq!(zero.value, v(&[0.0, 0.0]));

        let one = bounded_solution(&sys, &sd, &ControlSignal::constant(vec![1.0]), 3.0, h).unwrap();
        assert!((one.value.clone() - v(&[-1.0, 1.0])).norm() < 1e-12);
        let residual = sys.a() * &one.value + sys.b() * v(&[1.0]);
        assert!(residual.norm() < 1e-12);
        assert!(one.truncation_bound < 1e-15);
    }

    #[test]
    fn bounded_solution_trivial_part() {
        let sys = LinearSystem::from_rows(
            &[vec![0.0, 1.0], vec![-1.0, 0.0]],
            &[vec![1.0], vec![0.0]],
            ControlRange::symmetric_box(1, 1.0),
        )
        .unwrap();
        let sd = spectral_decompose(sys.a(), DEFAULT_GROUP_TOL).unwrap();
        let e = bounded_solution(&sys, &sd, &ControlSignal::constant(vec![1.0]), 0.0, 10.0).unwrap();
        assert!(e.trivial_hyperbolic_part);
        assert_eq!(e.value, v(&[0.0, 0.0]));
    }

    #[test]
    fn bounded_solution_shift_equivariance() {
        let sys = example1();
        let sd = spectral_decompose(sys.a(), DEFAULT_GROUP_TOL).unwrap();
        let u = ControlSignal::periodic(2.0, vec![1.0], vec![vec![1.0], vec![-1.0]]).unwrap();
        for t in [0.3, 1.7, 4.25] {
            let direct = bounded_solution(&sys, &sd, &u, t, 40.0).unwrap().value;
            let shifted = bounded_solution(&sys, &sd, &u.shift(t), 0.0, 40.0).unwrap().value;
            assert!((direct - shifted).norm() < 1e-6);
        }
    }

    #[test]
    fn lifted_exponent_examples() {
        let sys = diag3();
        let sd = spectral_decompose(sys.a(), DEFAULT_GROUP_TOL).unwrap();
        let g = sd.lifted_gram();
        let u = ControlSignal::zero(1);
        let l = lifted_exponent(&sys, &g, &v(&[1.0, 0.0, 0.0]), 0.0, &u, 50.0).unwrap();
        assert!((l - 2.0).abs() < 0.01);
        let l = lifted_exponent(&sys, &g, &v(&[0.0, 0.0, 1.0]), 0.0, &u, 50.0).unwrap();
        assert!((l + 1.0).abs() < 0.01);
        assert!(lifted_exponent(&sys, &g, &v(&[0.0, 0.0, 0.0]), 0.0, &u, 50.0).is_err());
    }

    #[test]
    fn central_bundle_has_zero_exponent() {
        // the bounded solution e(u,0) = (-1, 1) for u = 1; the lifted point
        // (e(u,0), 1) stays bounded, while (-e(u,0), 1) escapes at rate 1
        let sys = example1();
        let sd = spectral_decompose(sys.a(), DEFAULT_GROUP_TOL).unwrap();
        let g = sd.lifted_gram();
        let u = ControlSignal::constant(vec![1.0]);
        let e0 = bounded_solution(&sys, &sd, &u, 0.0, 40.0).unwrap().value;
        let central = lifted_exponent(&sys, &g, &e0, 1.0, &u, 50.0).unwrap();
        assert!(central.abs() < 0.05, "{central}");
        let flipped = lifted_exponent(&sys, &g, &(-e0), 1.0, &u, 50.0).unwrap();
        assert!((flipped - 1.0).abs() < 0.05, "{flipped}");
    }
}
