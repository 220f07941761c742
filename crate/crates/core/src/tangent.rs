//! Tangent bundle of the Poincaré sphere: the projection T_yπ, the
//! linearized cocycle of the induced flow, Selgrade subbundle frames over
//! points at infinity and finite-time Lyapunov exponents.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ode::{self, Tolerances};
use crate::spectral::{LiftedGram, SpectralData};
use crate::sphere::{sphere_to_chart, FlowOptions, PoincareSphere, SpherePoint, EQUATOR_TOL};
use crate::system::{bounded_solution, default_horizon, flow, ControlSignal, LinearSystem, TransitionCache};

/// Vector tangent to Sⁿ at `base`.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentVector {
    pub base: SpherePoint,
    pub vec: DVector<f64>,
}

impl TangentVector {
    /// Checks ⟨vec, base⟩′ = 0 to 1e-10 (relative to ‖vec‖ when it exceeds 1).
    pub fn new(base: SpherePoint, vec: DVector<f64>, gram: &LiftedGram) -> Result<Self> {
        if vec.len() != base.coords().len() {
            return Err(Error::dim("tangent vector", base.coords().len(), vec.len()));
        }
        let ip = gram.inner(&vec, base.coords());
        if ip.abs() > 1e-10 * gram.norm(&vec).max(1.0) {
            return Err(Error::input(format!("vector is not tangent: ⟨v,s⟩′ = {ip:e}")));
        }
        Ok(TangentVector { base, vec })
    }

    pub fn norm(&self, gram: &LiftedGram) -> f64 {
        gram.norm(&self.vec)
    }
}

/// (T_yπ)(y, v) = (πy, ‖y‖⁻¹(v − ‖y‖⁻²⟨v,y⟩′y)).
pub fn tangent_project(gram: &LiftedGram, y: &DVector<f64>, v: &DVector<f64>) -> Result<TangentVector> {
    if y.len() != gram.dim() || v.len() != gram.dim() {
        return Err(Error::dim("tangent projection", gram.dim(), v.len().max(y.len())));
    }
    let ny = gram.norm(y);
    if !(ny >= 1e-300) || !ny.is_finite() {
        return Err(Error::Degenerate(format!("cannot project at a base of norm {ny}")));
    }
    let base = SpherePoint::from_unit(y / ny);
    let vec = tangent_part(gram, base.coords(), v) / ny;
    Ok(TangentVector { base, vec })
}

/// v − ⟨v,s⟩′s for unit s.
fn tangent_part(gram: &LiftedGram, s: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    v - s * gram.inner(v, s)
}

/// D_sπφ¹(t, x, 0, u)(v, v_{n+1}) for a base point (x, 0) on the equator:
/// ‖e^{At}x‖⁻¹ times the tangential part of (e^{At}v + v_{n+1}∫₀ᵗe^{A(t−σ)}Bu(σ)dσ, v_{n+1}).
///
/// Base and direction are propagated together through the lifted
/// transitions and rescaled by the same factor at every step, which leaves
/// the projection unchanged while avoiding overflow.
pub fn linearized_cocycle_equator(
    sphere: &PoincareSphere,
    t: f64,
    x: &DVector<f64>,
    u: &ControlSignal,
    v: &DVector<f64>,
    v_last: f64,
) -> Result<TangentVector> {
    let n = sphere.n();
    let gram = sphere.gram();
    if x.len() != n || v.len() != n {
        return Err(Error::dim("equator base point", n, x.len().max(v.len())));
    }
    let s = SpherePoint::on_equator(x, gram)?;
    if (gram.norm(s.coords()) - 1.0).abs() > 1e-12 || (gram.norm(&embed_x(x)) - 1.0).abs() > 1e-10 {
        return Err(Error::input("equator base point must have unit norm"));
    }
    let w = lift(v, v_last);
    TangentVector::new(s.clone(), w.clone(), gram)?;
    let sys = sphere.system();
    if u.dim() != sys.m() {
        return Err(Error::dim("control value length", sys.m(), u.dim()));
    }
    let mut y = s.into_coords();
    let mut w = w;
    let mut cache = TransitionCache::new(sys);
    for seg in u.steps(0.0, t, 1.0) {
        let phi = cache.get(&seg.value, seg.duration)?;
        y = phi * y;
        w = phi * w;
        let c = gram.norm(&y);
        y /= c;
        w /= c;
    }
    tangent_project(gram, &y, &w)
}

fn embed_x(x: &DVector<f64>) -> DVector<f64> {
    lift(x, 0.0)
}

fn lift(x: &DVector<f64>, r: f64) -> DVector<f64> {
    let n = x.len();
    DVector::from_fn(n + 1, |i, _| if i < n { x[i] } else { r })
}

/// How the derivative of the sphere flow is evaluated away from the equator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CocycleMethod {
    /// Variational equation integrated alongside the intrinsic backend.
    Variational(Tolerances),
    /// T_{Φs}π ∘ Φ with the exact lifted transition Φ.
    ExactLift,
    /// Central differences of the exact-lift sphere flow with step `eps`.
    FiniteDifference(f64),
}

impl Default for CocycleMethod {
    fn default() -> Self {
        CocycleMethod::Variational(Tolerances::default())
    }
}

/// D_sπφ¹(t, s, u)w for a base point anywhere on Sⁿ.
pub fn linearized_cocycle_general(
    sphere: &PoincareSphere,
    t: f64,
    w: &TangentVector,
    u: &ControlSignal,
    method: CocycleMethod,
) -> Result<TangentVector> {
    let gram = sphere.gram();
    let sys = sphere.system();
    if w.vec.len() != sys.n() + 1 {
        return Err(Error::dim("tangent vector", sys.n() + 1, w.vec.len()));
    }
    if u.dim() != sys.m() {
        return Err(Error::dim("control value length", sys.m(), u.dim()));
    }
    let s = &w.base;
    match method {
        CocycleMethod::ExactLift => {
            let mut y = s.coords().clone();
            let mut v = w.vec.clone();
            let mut cache = TransitionCache::new(sys);
            for seg in u.steps(0.0, t, 1.0) {
                let phi = cache.get(&seg.value, seg.duration)?;
                y = phi * y;
                v = phi * v;
                let c = gram.norm(&y);
                y /= c;
                v /= c;
            }
            tangent_project(gram, &y, &v)
        }
        CocycleMethod::FiniteDifference(eps) => {
            if !(eps > 0.0) {
                return Err(Error::Parameter("finite-difference step must be positive".into()));
            }
            let opts = FlowOptions::default();
            let plus = sphere.project(&(s.coords() + &w.vec * eps))?;
            let minus = sphere.project(&(s.coords() - &w.vec * eps))?;
            let fp = sphere.flow(t, &plus, u, &opts)?;
            let fm = sphere.flow(t, &minus, u, &opts)?;
            let base = sphere.flow(t, s, u, &opts)?;
            let d = (fp.coords() - fm.coords()) / (2.0 * eps);
            Ok(TangentVector {
                vec: tangent_part(gram, base.coords(), &d),
                base,
            })
        }
        CocycleMethod::Variational(tol) => {
            let n1 = sys.n() + 1;
            let field = sphere.field();
            let gens = field.generators();
            let mut z = DVector::zeros(2 * n1);
            z.rows_mut(0, n1).copy_from(s.coords());
            z.rows_mut(n1, n1).copy_from(&w.vec);
            let mut h = 0.0;
            for seg in u.segments(0.0, t) {
                let mut m = gens[0].clone();
                for (i, vi) in seg.value.iter().enumerate() {
                    m += &gens[i + 1] * *vi;
                }
                let rhs = |z: &DVector<f64>| -> DVector<f64> {
                    let s = z.rows(0, n1).into_owned();
                    let w = z.rows(n1, n1).into_owned();
                    let ms = &m * &s;
                    let mw = &m * &w;
                    let c = gram.inner(&ms, &s);
                    let ds = &ms - &s * c;
                    let dw = &mw - &s * (gram.inner(&mw, &s) + gram.inner(&ms, &w)) - &w * c;
                    let mut out = DVector::zeros(2 * n1);
                    out.rows_mut(0, n1).copy_from(&ds);
                    out.rows_mut(n1, n1).copy_from(&dw);
                    out
                };
                ode::integrate(rhs, &mut z, seg.duration, &tol, &mut h, |z| {
                    let mut s = z.rows(0, n1).into_owned();
                    s /= gram.norm(&s);
                    let w = z.rows(n1, n1).into_owned();
                    let w = tangent_part(gram, &s, &w);
                    z.rows_mut(0, n1).copy_from(&s);
                    z.rows_mut(n1, n1).copy_from(&w);
                })?;
            }
            let base = SpherePoint::from_unit(z.rows(0, n1).into_owned());
            Ok(TangentVector {
                vec: z.rows(n1, n1).into_owned(),
                base,
            })
        }
    }
}

/// Which Selgrade subbundle a frame spans.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FrameLabel {
    /// Image of L(λᵢ) × {0}, i ≠ i₀ (zero-based index into the exponent list).
    Lyapunov(usize),
    /// Central subbundle spanned by L⁰ and the bounded solution.
    Central,
    /// Complement of the base direction inside L(λ_{i₀}).
    Base,
}

impl fmt::Display for FrameLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FrameLabel::Lyapunov(i) => write!(f, "V_{}", i + 1),
            FrameLabel::Central => write!(f, "V_c"),
            FrameLabel::Base => write!(f, "V_i0"),
        }
    }
}

impl Serialize for FrameLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Basis of one Selgrade subbundle at a base point on the equator.
#[derive(Clone, Debug)]
pub struct SubbundleFrame {
    pub base: SpherePoint,
    pub label: FrameLabel,
    /// Basis vectors as columns, tangent at `base`.
    pub basis: DMatrix<f64>,
    pub theoretical_exponent: f64,
    /// λᵢ for Lyapunov frames.
    pub lambda: Option<f64>,
}

impl SubbundleFrame {
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn vector(&self, j: usize) -> TangentVector {
        TangentVector {
            base: self.base.clone(),
            vec: self.basis.column(j).into_owned(),
        }
    }

    /// Normalized sum of the basis vectors, a generic element of the frame.
    pub fn generic_vector(&self, gram: &LiftedGram) -> TangentVector {
        let mut v = DVector::zeros(self.basis.nrows());
        for j in 0..self.dim() {
            v += self.basis.column(j);
        }
        let nv = gram.norm(&v);
        TangentVector {
            base: self.base.clone(),
            vec: v / nv,
        }
    }
}

/// Point of _S L(λ_{i₀})^∞ as (x, 0) with x ∈ L(λ_{i₀}) a unit vector.
fn equator_base(spectral: &SpectralData, i0: usize, s: &SpherePoint) -> Result<DVector<f64>> {
    if i0 >= spectral.exponents.len() {
        return Err(Error::input(format!("no Lyapunov exponent with index {i0}")));
    }
    if spectral.center_index == Some(i0) {
        return Err(Error::input("the base exponent must be nonzero"));
    }
    if s.n() != spectral.dim() {
        return Err(Error::dim("base point", spectral.dim() + 1, s.n() + 1));
    }
    if s.last().abs() > EQUATOR_TOL {
        return Err(Error::input("base point must lie on the equator"));
    }
    let x = s.head();
    let res = spectral.membership_residual(i0, &x);
    if res > 1e-8 {
        return Err(Error::input(format!(
            "base point is not in L({}) (residual {res:e})",
            spectral.exponents[i0]
        )));
    }
    Ok(x)
}

/// Selgrade frames over the point s = (x, 0) of _S L(λ_{i₀})^∞ for the control `u`.
///
/// The central direction uses the bounded solution e(u, 0): the lifted
/// central bundle is {(y + r·e(u,0), r) : y ∈ L⁰, r ∈ ℝ}.
pub fn selgrade_frames(
    sys: &LinearSystem,
    spectral: &SpectralData,
    i0: usize,
    s: &SpherePoint,
    u: &ControlSignal,
) -> Result<Vec<SubbundleFrame>> {
    let x = equator_base(spectral, i0, s)?;
    let n = sys.n();
    let gram = spectral.lifted_gram();
    let l0 = spectral.exponents[i0];
    let mut frames = Vec::new();
    for (i, &li) in spectral.exponents.iter().enumerate() {
        if i == i0 || Some(i) == spectral.center_index {
            continue;
        }
        let basis = embed_cols(&spectral.spaces[i]);
        frames.push(SubbundleFrame {
            base: s.clone(),
            label: FrameLabel::Lyapunov(i),
            basis,
            theoretical_exponent: li - l0,
            lambda: Some(li),
        });
    }

    let mut central: Vec<DVector<f64>> = Vec::new();
    let e0 = if spectral.has_hyperbolic_part() {
        bounded_solution(sys, spectral, u, 0.0, default_horizon(spectral))?.value
    } else {
        DVector::zeros(n)
    };
    let c = lift(&e0, 1.0);
    central.push(tangent_part(&gram, s.coords(), &c));
    let center = spectral.center_basis();
    for j in 0..center.ncols() {
        central.push(lift(&center.column(j).into_owned(), 0.0));
    }
    frames.push(SubbundleFrame {
        base: s.clone(),
        label: FrameLabel::Central,
        basis: DMatrix::from_columns(&central),
        theoretical_exponent: -l0,
        lambda: None,
    });

    // complement of x in L(λ_{i₀}) under the adapted product
    let space = &spectral.spaces[i0];
    let mut comp: Vec<DVector<f64>> = Vec::new();
    let mut q: Vec<DVector<f64>> = vec![x.clone() / spectral.norm(&x)];
    for j in 0..space.ncols() {
        let mut w = space.column(j).into_owned();
        for b in &q {
            let c = spectral.inner(&w, b);
            w -= b * c;
        }
        let nw = spectral.norm(&w);
        if nw > 1e-8 {
            w /= nw;
            q.push(w.clone());
            comp.push(lift(&w, 0.0));
        }
    }
    if !comp.is_empty() {
        frames.push(SubbundleFrame {
            base: s.clone(),
            label: FrameLabel::Base,
            basis: DMatrix::from_columns(&comp),
            theoretical_exponent: 0.0,
            lambda: Some(l0),
        });
    }
    frames.sort_by(|a, b| b.theoretical_exponent.total_cmp(&a.theoretical_exponent));
    Ok(frames)
}

fn embed_cols(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, k) = m.shape();
    let mut e = DMatrix::zeros(n + 1, k);
    e.view_mut((0, 0), (n, k)).copy_from(m);
    e
}

/// κ of the stable part: the largest negative theoretical exponent among `frames`.
pub fn kappa_minus(frames: &[SubbundleFrame]) -> Option<f64> {
    frames
        .iter()
        .map(|f| f.theoretical_exponent)
        .filter(|e| *e < 0.0)
        .max_by(|a, b| a.total_cmp(b))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

/// Restriction that keeps a propagated vector inside one subbundle.
///
/// After every unit step the vector is split along the lifted Selgrade
/// decomposition at the current time and only the component of `label` is
/// kept, and the base trajectory is held in the equator of L(λ_{i₀}). This
/// suppresses the exponential amplification of rounding errors in the
/// dominant directions; it does not alter the growth being measured.
#[derive(Clone, Copy, Debug)]
pub struct Reprojection<'a> {
    pub spectral: &'a SpectralData,
    pub i0: usize,
    pub label: FrameLabel,
}

impl<'a> Reprojection<'a> {
    fn apply(
        &self,
        sys: &LinearSystem,
        u: &ControlSignal,
        t: f64,
        gram: &LiftedGram,
        s: &DVector<f64>,
        w: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let sd = self.spectral;
        let n = sys.n();
        let x = w.rows(0, n).into_owned();
        let r = w[n];
        let e = if sd.has_hyperbolic_part() && r != 0.0 {
            bounded_solution(sys, sd, u, t, default_horizon(sd))?.value
        } else {
            DVector::zeros(n)
        };
        let lifted = match self.label {
            FrameLabel::Lyapunov(i) => lift(&(&sd.projections[i] * (&x - &e * r)), 0.0),
            FrameLabel::Base => lift(&(&sd.projections[self.i0] * (&x - &e * r)), 0.0),
            FrameLabel::Central => lift(&(&sd.proj_center * &x + &e * r), r),
        };
        Ok(tangent_part(gram, s, &lifted))
    }

    fn base(&self, gram: &LiftedGram, s: &DVector<f64>) -> DVector<f64> {
        let n = s.len() - 1;
        let x = &self.spectral.projections[self.i0] * s.rows(0, n);
        let y = lift(&x, 0.0);
        let ny = gram.norm(&y);
        y / ny
    }
}

/// Finite-time exponent (1/±T)·log‖D_sπφ¹(±T, s, u)w‖/‖w‖, accumulated over unit
/// steps of the exact-lift linearization with renormalization.
pub fn exponent_estimate(
    sphere: &PoincareSphere,
    w: &TangentVector,
    u: &ControlSignal,
    horizon: f64,
    direction: Direction,
    reproject: Option<Reprojection<'_>>,
) -> Result<f64> {
    let gram = sphere.gram();
    let sys = sphere.system();
    if u.dim() != sys.m() {
        return Err(Error::dim("control value length", sys.m(), u.dim()));
    }
    if !(horizon > 0.0) {
        return Err(Error::Parameter("horizon must be positive".into()));
    }
    let nw = gram.norm(&w.vec);
    if !(nw > 0.0) {
        return Err(Error::input("zero tangent vector has no exponent"));
    }
    let sign = match direction {
        Direction::Forward => 1.0,
        Direction::Backward => -1.0,
    };
    let mut y = w.base.coords().clone();
    let mut v = &w.vec / nw;
    let mut cache = TransitionCache::new(sys);
    let mut log_growth = 0.0;
    let mut t = 0.0;
    for seg in u.steps(0.0, sign * horizon, 1.0) {
        let phi = cache.get(&seg.value, seg.duration)?;
        let y1 = phi * &y;
        let ny = gram.norm(&y1);
        y = y1 / ny;
        v = tangent_part(gram, &y, &(phi * &v)) / ny;
        t += seg.duration;
        if let Some(rp) = &reproject {
            y = rp.base(gram, &y);
            v = rp.apply(sys, u, t, gram, &y, &v)?;
        }
        let g = gram.norm(&v);
        if !(g > 0.0 && g.is_finite()) {
            return Err(Error::Range {
                what: "tangent vector collapsed".into(),
                time: t,
            });
        }
        log_growth += g.ln();
        v /= g;
    }
    Ok(log_growth / (sign * horizon))
}

/// Log of the growth factor ‖D_sπφ¹(t, s, u)w‖/‖w‖ (exact-lift linearization).
pub fn log_growth(sphere: &PoincareSphere, w: &TangentVector, u: &ControlSignal, t: f64) -> Result<f64> {
    if t == 0.0 {
        return Ok(0.0);
    }
    let dir = if t > 0.0 { Direction::Forward } else { Direction::Backward };
    Ok(exponent_estimate(sphere, w, u, t.abs(), dir, None)? * t)
}

/// Outcome of [`stable_convergence_check`].
#[derive(Clone, Debug, Serialize)]
pub struct StableReport {
    pub seed: u64,
    pub delta: f64,
    pub alpha: f64,
    pub kappa: f64,
    /// Sample times 0, 1, …, T.
    pub times: Vec<f64>,
    /// e^{−αt}·d(πφ¹(t,s,u), πφ¹(t,s₀,u)) at the sample times.
    pub weighted_distances: Vec<f64>,
    /// Non-increasing after the burn-in (first third of the horizon).
    pub monotone_tail: bool,
    pub converged: bool,
    /// ‖(φ⁺)⁻¹(s)‖ and ‖φ(T, (φ⁺)⁻¹(s), u)‖ when the seed lies in the upper hemisphere.
    pub chart_initial_norm: Option<f64>,
    pub chart_final_norm: Option<f64>,
    pub chart_diverged: Option<bool>,
    pub inconclusive: bool,
}

impl StableReport {
    pub fn passed(&self) -> bool {
        self.converged && self.chart_diverged.unwrap_or(true)
    }
}

/// Parameters for [`stable_convergence_check`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StableCheck {
    pub delta: f64,
    pub alpha: f64,
    pub horizon: f64,
    pub seed: u64,
}

/// Seeds a point at geodesic distance δ from s₀ along a random unit direction of
/// the stable frames and tracks the weighted distance of the two trajectories.
pub fn stable_convergence_check(
    sphere: &PoincareSphere,
    frames: &[SubbundleFrame],
    u: &ControlSignal,
    params: StableCheck,
) -> Result<StableReport> {
    let StableCheck {
        delta,
        alpha,
        horizon,
        seed,
    } = params;
    let kappa = kappa_minus(frames).ok_or_else(|| Error::input("no stable subbundle at this base point"))?;
    if !(alpha > kappa && alpha < 0.0) {
        return Err(Error::Parameter(format!("alpha must lie in ({kappa}, 0)")));
    }
    if !(delta >= 0.0) || !(horizon >= 1.0) {
        return Err(Error::Parameter("need delta ≥ 0 and T ≥ 1".into()));
    }
    let gram = sphere.gram();
    let s0 = frames[0].base.clone();
    let stable: Vec<&SubbundleFrame> = frames.iter().filter(|f| f.theoretical_exponent < 0.0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = DVector::zeros(s0.coords().len());
    for f in &stable {
        for j in 0..f.dim() {
            d += f.basis.column(j) * rng.random_range(-1.0..1.0);
        }
    }
    let nd = gram.norm(&d);
    if nd == 0.0 {
        return Err(Error::Degenerate("random stable direction vanished".into()));
    }
    d /= nd;
    // prefer the seed on the upper hemisphere so that its chart preimage exists
    if d[d.len() - 1] < 0.0 {
        d = -d;
    }
    let s = sphere.project(&(s0.coords() * delta.cos() + &d * delta.sin()))?;

    let opts = FlowOptions::default();
    let steps = horizon.round() as usize;
    let mut prop_a = sphere.propagator(u, opts)?;
    let mut prop_b = sphere.propagator(u, opts)?;
    let (mut a, mut b) = (s.clone(), s0.clone());
    let mut times = vec![0.0];
    let mut weighted = vec![sphere.distance(&a, &b)];
    for k in 0..steps {
        let (ta, tb) = (k as f64, (k + 1) as f64);
        a = prop_a.advance(&a, ta, tb)?;
        b = prop_b.advance(&b, ta, tb)?;
        times.push(tb);
        weighted.push((-alpha * tb).exp() * sphere.distance(&a, &b));
    }
    let burn = steps / 3;
    let monotone_tail = weighted[burn..].windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9) + 1e-300);
    let last = *weighted.last().unwrap();
    let converged = monotone_tail && last < 1e-3;

    let (mut ci, mut cf, mut cd) = (None, None, None);
    if let Ok(x) = sphere_to_chart(&s) {
        let xf = flow(sphere.system(), horizon, &x, u)?;
        let (n0, n1) = (x.norm(), xf.norm());
        ci = Some(n0);
        cf = Some(n1);
        cd = Some(n1 > 1e3 && n1 > n0);
    }
    Ok(StableReport {
        seed,
        delta,
        alpha,
        kappa,
        times,
        weighted_distances: weighted,
        monotone_tail,
        converged,
        chart_initial_norm: ci,
        chart_final_norm: cf,
        chart_diverged: cd,
        inconclusive: !monotone_tail,
    })
}

/// Two points on the stable set of an unstable eigendirection: s₁ = π(z₀, 1)
/// and s₂ = πφ¹(τ, s₁, 0).
#[derive(Clone, Debug, Serialize)]
pub struct EigenDivergenceReport {
    pub lambda: f64,
    pub tau: f64,
    pub alpha: f64,
    pub times: Vec<f64>,
    /// e^{−αt}·d(πφ¹(t,s₁,0), πφ¹(t,s₂,0)).
    pub weighted_sphere_distances: Vec<f64>,
    /// ‖φ(t,z₁,0) − φ(t,z₂,0)‖.
    pub chart_distances: Vec<f64>,
    /// Least-squares slope of log chart distance over the second half.
    pub chart_growth_rate: f64,
    /// Reparametrized time t′(T) solving ‖φ(t′,z₂,0)‖ = ‖φ(T,z₁,0)‖.
    pub matched_time: f64,
    /// ‖φ(T,z₁,0) − φ(t′(T),z₂,0)‖.
    pub matched_distance: f64,
    pub converged: bool,
    pub diverged: bool,
}

/// Time t′ in [lo, hi] at which ‖φ(t′, z, u)‖ equals `target`, by bisection on a
/// sign change of the norm mismatch.
pub fn matching_time(
    sys: &LinearSystem,
    z: &DVector<f64>,
    u: &ControlSignal,
    target: f64,
    lo: f64,
    hi: f64,
) -> Result<Option<f64>> {
    let g = |t: f64| -> Result<f64> { Ok(flow(sys, t, z, u)?.norm() - target) };
    let (mut a, mut b) = (lo, hi);
    let (mut ga, gb) = (g(a)?, g(b)?);
    if ga == 0.0 {
        return Ok(Some(a));
    }
    if ga.signum() == gb.signum() {
        return Ok(None);
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let gm = g(m)?;
        if gm == 0.0 || (b - a) < 1e-13 * (1.0 + m.abs()) {
            return Ok(Some(m));
        }
        if gm.signum() == ga.signum() {
            a = m;
            ga = gm;
        } else {
            b = m;
        }
    }
    Ok(Some(0.5 * (a + b)))
}

/// The divergence example: sphere trajectories through π(z₀,1) and its time-τ
/// image converge to (z₀, 0) while the ℝⁿ trajectories separate like e^{λt}.
pub fn eigen_divergence_example(
    sphere: &PoincareSphere,
    z0: &DVector<f64>,
    tau: f64,
    alpha: f64,
    horizon: f64,
) -> Result<EigenDivergenceReport> {
    let sys = sphere.system();
    let n = sys.n();
    if z0.len() != n {
        return Err(Error::dim("eigenvector", n, z0.len()));
    }
    let z1 = z0 / z0.norm();
    let az = sys.a() * &z1;
    let lambda = az.dot(&z1);
    if (az - &z1 * lambda).norm() > 1e-8 * sys.a().norm().max(1.0) || !(lambda > 0.0) {
        return Err(Error::input("z0 must be an eigenvector for a positive eigenvalue"));
    }
    let u = ControlSignal::zero(sys.m());
    let z2 = flow(sys, tau, &z1, &u)?;
    let s1 = sphere.chart_to_sphere(&z1)?;
    let s2 = sphere.chart_to_sphere(&z2)?;
    let opts = FlowOptions::default();
    let steps = horizon.round() as usize;
    let (mut a, mut b) = (s1, s2);
    let (mut times, mut ws, mut cds) = (Vec::new(), Vec::new(), Vec::new());
    let mut pa = sphere.propagator(&u, opts)?;
    let mut pb = sphere.propagator(&u, opts)?;
    for k in 0..=steps {
        let t = k as f64;
        if k > 0 {
            a = pa.advance(&a, t - 1.0, t)?;
            b = pb.advance(&b, t - 1.0, t)?;
        }
        times.push(t);
        ws.push((-alpha * t).exp() * sphere.distance(&a, &b));
        let d = flow(sys, t, &z1, &u)? - flow(sys, t, &z2, &u)?;
        cds.push(d.norm());
    }
    let half = steps / 2;
    let (xs, ys): (Vec<f64>, Vec<f64>) = (half..=steps).map(|k| (times[k], cds[k].ln())).unzip();
    let rate = slope(&xs, &ys);
    let target = flow(sys, horizon, &z1, &u)?.norm();
    let matched = matching_time(sys, &z2, &u, target, 0.0, horizon)?
        .ok_or_else(|| Error::Degenerate("no norm-matching time found".into()))?;
    let matched_distance = (flow(sys, horizon, &z1, &u)? - flow(sys, matched, &z2, &u)?).norm();
    let burn = steps / 3;
    let converged = ws[burn..].windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9)) && *ws.last().unwrap() < 1e-3;
    let diverged = *cds.last().unwrap() > 1e3;
    Ok(EigenDivergenceReport {
        lambda,
        tau,
        alpha,
        times,
        weighted_sphere_distances: ws,
        chart_distances: cds,
        chart_growth_rate: rate,
        matched_time: matched,
        matched_distance,
        converged,
        diverged,
    })
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{spectral_decompose, DEFAULT_GROUP_TOL};
    use crate::system::ControlRange;

    fn sys(a: &[Vec<f64>]) -> LinearSystem {
        let n = a.len();
        LinearSystem::from_rows(a, &vec![vec![1.0]; n], ControlRange::symmetric_box(1, 1.0)).unwrap()
    }

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_vec(x.to_vec())
    }

    fn example2() -> LinearSystem {
        sys(&[vec![2.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, -1.0]])
    }

    fn example3() -> LinearSystem {
        sys(&[vec![1.0, 1.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, -1.0]])
    }

    fn example5() -> LinearSystem {
        sys(&[
            vec![2.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 1.0, 0.0],
            vec![0.0, -1.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.0, -1.0],
        ])
    }

    #[test]
    fn projection_examples() {
        let g = LiftedGram::identity(2);
        let t = tangent_project(&g, &v(&[0.0, 1.0, 0.0]), &v(&[1.0, 0.0, 0.0])).unwrap();
        assert_eq!(t.vec, v(&[1.0, 0.0, 0.0]));
        let k = tangent_project(&g, &v(&[0.0, 2.0, 0.0]), &v(&[0.0, 2.0, 0.0])).unwrap();
        assert_eq!(k.vec, v(&[0.0, 0.0, 0.0]));
        let c = tangent_project(&g, &v(&[0.0, 1.0, 0.0]), &v(&[1.0, 1.0, 0.0])).unwrap();
        assert_eq!(c.base.coords(), &v(&[0.0, 1.0, 0.0]));
        assert_eq!(c.vec, v(&[1.0, 0.0, 0.0]));
        assert!(tangent_project(&g, &v(&[0.0, 0.0, 0.0]), &v(&[1.0, 0.0, 0.0])).is_err());
    }

    #[test]
    fn rejects_non_tangent_direction() {
        let sp = PoincareSphere::new(example2());
        let x = v(&[0.0, 1.0, 0.0]);
        let r = linearized_cocycle_equator(&sp, 1.0, &x, &ControlSignal::zero(1), &x, 0.0);
        assert!(matches!(r, Err(Error::Input(_))));
    }

    #[test]
    fn equator_growth_rates_example2() {
        let sp = PoincareSphere::new(example2());
        let x = v(&[0.0, 1.0, 0.0]);
        let u = ControlSignal::zero(1);
        let t = 30.0;
        let d = linearized_cocycle_equator(&sp, t, &x, &u, &v(&[1.0, 0.0, 0.0]), 0.0).unwrap();
        assert!((d.vec.norm().ln() / t - 1.0).abs() < 1e-6);
        let d = linearized_cocycle_equator(&sp, t, &x, &u, &v(&[0.0, 0.0, 0.0]), 1.0).unwrap();
        assert!((d.vec.norm().ln() / t + 1.0).abs() < 1e-6);
    }

    #[test]
    fn general_methods_agree_on_equator() {
        let sp = PoincareSphere::new(example5());
        let x = v(&[0.0, 0.6, 0.8, 0.0]);
        let u = ControlSignal::periodic(2.0, vec![0.7], vec![vec![1.0], vec![-0.5]]).unwrap();
        let dir = v(&[0.3, 0.4, -0.3, 1.0]);
        let closed = linearized_cocycle_equator(&sp, 5.0, &x, &u, &dir, 0.5).unwrap();
        let s = SpherePoint::on_equator(&x, sp.gram()).unwrap();
        let w = TangentVector::new(s, lift(&dir, 0.5), sp.gram()).unwrap();
        for m in [CocycleMethod::default(), CocycleMethod::ExactLift, CocycleMethod::FiniteDifference(1e-6)] {
            let g = linearized_cocycle_general(&sp, 5.0, &w, &u, m).unwrap();
            let rel = (&g.vec - &closed.vec).norm() / closed.vec.norm();
            assert!(rel < 1e-5, "{m:?}: {rel}");
        }
    }

    #[test]
    fn general_is_identity_at_zero_and_linear() {
        let sp = PoincareSphere::new(example3());
        let s = sp.project(&v(&[0.2, -0.4, 0.5, 0.7])).unwrap();
        let g = sp.gram();
        let w1 = TangentVector::new(s.clone(), tangent_part(g, s.coords(), &v(&[1.0, 0.0, 0.0, 0.0])), g).unwrap();
        let w2 = TangentVector::new(s.clone(), tangent_part(g, s.coords(), &v(&[0.0, 0.0, 1.0, 1.0])), g).unwrap();
        let u = ControlSignal::constant(vec![0.4]);
        let m = CocycleMethod::default();
        let id = linearized_cocycle_general(&sp, 0.0, &w1, &u, m).unwrap();
        assert!((id.vec - &w1.vec).norm() < 1e-15);
        let combo = TangentVector {
            base: s.clone(),
            vec: &w1.vec * 2.0 - &w2.vec * 3.0,
        };
        let d1 = linearized_cocycle_general(&sp, 3.0, &w1, &u, m).unwrap().vec;
        let d2 = linearized_cocycle_general(&sp, 3.0, &w2, &u, m).unwrap().vec;
        let dc = linearized_cocycle_general(&sp, 3.0, &combo, &u, m).unwrap().vec;
        assert!((dc - (d1 * 2.0 - d2 * 3.0)).norm() < 1e-8);
    }

    fn labels(frames: &[SubbundleFrame]) -> Vec<(String, usize, f64)> {
        frames
            .iter()
            .map(|f| (f.label.to_string(), f.dim(), f.theoretical_exponent))
            .collect()
    }

    #[test]
    fn frames_example2() {
        let s = example2();
        let sd = spectral_decompose(s.a(), DEFAULT_GROUP_TOL).unwrap();
        let g = sd.lifted_gram();
        let base = SpherePoint::new(v(&[0.0, 1.0, 0.0, 0.0]), &g).unwrap();
        let f = selgrade_frames(&s, &sd, 1, &base, &ControlSignal::zero(1)).unwrap();
        assert_eq!(
            labels(&f),
            vec![
                ("V_1".to_string(), 1, 1.0),
                ("V_c".to_string(), 1, -1.0),
                ("V_3".to_string(), 1, -2.0)
            ]
        );
        assert_eq!(f[1].basis.column(0).into_owned(), v(&[0.0, 0.0, 0.0, 1.0]));
        assert_eq!(kappa_minus(&f), Some(-1.0));
        assert_eq!(f.iter().map(|x| x.dim()).sum::<usize>(), 3);
    }

    #[test]
    fn frames_reject_bad_base() {
        let s = example2();
        let sd = spectral_decompose(s.a(), DEFAULT_GROUP_TOL).unwrap();
        let g = sd.lifted_gram();
        let base = SpherePoint::new(v(&[0.6, 0.8, 0.0, 0.0]), &g).unwrap();
        assert!(selgrade_frames(&s, &sd, 1, &base, &ControlSignal::zero(1)).is_err());
    }

    #[test]
    fn frames_example3_and_5() {
        let s = example3();
        let sd = spectral_decompose(s.a(), DEFAULT_GROUP_TOL).unwrap();
        let g = sd.lifted_gram();
        let base = SpherePoint::new(v(&[0.6, 0.8, 0.0, 0.0]), &g).unwrap();
        let f = selgrade_frames(&s, &sd, 0, &base, &ControlSignal::zero(1)).unwrap();
        let got: Vec<(String, f64)> = labels(&f).into_iter().map(|(l, _, e)| (l, e)).collect();
        assert_eq!(
            got,
            vec![("V_i0".into(), 0.0), ("V_c".into(), -1.0), ("V_2".into(), -2.0)]
        );

        let s = example5();
        let sd = spectral_decompose(s.a(), DEFAULT_GROUP_TOL).unwrap();
        let g = sd.lifted_gram();
        let base = SpherePoint::new(v(&[0.0, 1.0, 0.0, 0.0, 0.0]), &g).unwrap();
        let f = selgrade_frames(&s, &sd, 1, &base, &ControlSignal::zero(1)).unwrap();
        let got: Vec<(String, f64)> = labels(&f).into_iter().map(|(l, _, e)| (l, e)).collect();
        assert_eq!(
            got,
            vec![
                ("V_1".into(), 1.0),
                ("V_i0".into(), 0.0),
                ("V_c".into(), -1.0),
                ("V_3".into(), -2.0)
            ]
        );
    }

    #[test]
    fn estimates_match_theory_example2() {
        let s = example2();
        let sd = spectral_decompose(s.a(), DEFAULT_GROUP_TOL).unwrap();
        let sp = PoincareSphere::adapted(s.clone(), &sd).unwrap();
        let base = sp.point(v(&[0.0, 1.0, 0.0, 0.0])).unwrap();
        let u = ControlSignal::zero(1);
        for f in selgrade_frames(&s, &sd, 1, &base, &u).unwrap() {
            let w = f.generic_vector(sp.gram());
            for dir in [Direction::Forward, Direction::Backward] {
                let e = exponent_estimate(&sp, &w, &u, 50.0, dir, None).unwrap();
                assert!((e - f.theoretical_exponent).abs() < 0.05, "{} {dir:?}: {e}", f.label);
            }
        }
    }

    #[test]
    fn central_estimate_with_control_needs_bounded_solution() {
        let s = example2();
        let sd = spectral_decompose(s.a(), DEFAULT_GROUP_TOL).unwrap();
        let sp = PoincareSphere::adapted(s.clone(), &sd).unwrap();
        let base = sp.point(v(&[0.0, 1.0, 0.0, 0.0])).unwrap();
        let u = ControlSignal::periodic(3.0, vec![1.0], vec![vec![1.0], vec![-1.0]]).unwrap();
        let frames = selgrade_frames(&s, &sd, 1, &base, &u).unwrap();
        let vc = frames.iter().find(|f| f.label == FrameLabel::Central).unwrap();
        let rp = Reprojection {
            spectral: &sd,
            i0: 1,
            label: FrameLabel::Central,
        };
        let e = exponent_estimate(&sp, &vc.vector(0), &u, 50.0, Direction::Forward, Some(rp)).unwrap();
        assert!((e + 1.0).abs() < 0.05, "{e}");
    }

    #[test]
    fn stable_check_example2() {
        let s = example2();
        let sd = spectral_decompose(s.a(), DEFAULT_GROUP_TOL).unwrap();
        let sp = PoincareSphere::adapted(s.clone(), &sd).unwrap();
        let base = sp.point(v(&[0.0, 1.0, 0.0, 0.0])).unwrap();
        let u = ControlSignal::zero(1);
        let frames = selgrade_frames(&s, &sd, 1, &base, &u).unwrap();
        let params = StableCheck {
            delta: 1e-3,
            alpha: -0.5,
            horizon: 30.0,
            seed: 7,
        };
        let rep = stable_convergence_check(&sp, &frames, &u, params).unwrap();
        assert!(rep.converged && rep.chart_diverged == Some(true), "{rep:?}");
        let zero = stable_convergence_check(&sp, &frames, &u, StableCheck { delta: 0.0, ..params }).unwrap();
        assert!(zero.weighted_distances.iter().all(|d| *d == 0.0));
        assert!(stable_convergence_check(&sp, &frames, &u, StableCheck { alpha: -1.5, ..params }).is_err());
    }

    #[test]
    fn divergence_example() {
        let sp = PoincareSphere::new(example2());
        let rep = eigen_divergence_example(&sp, &v(&[0.0, 1.0, 0.0]), 1.0, -0.5, 30.0).unwrap();
        assert!(rep.converged && rep.diverged);
        assert!((rep.chart_growth_rate - 1.0).abs() < 1e-6);
        assert!((rep.matched_time - 29.0).abs() < 1e-8);
        assert!(rep.matched_distance < 1e-6 * flow(sp.system(), 30.0, &v(&[0.0, 1.0, 0.0]), &ControlSignal::zero(1)).unwrap().norm());
    }
}
