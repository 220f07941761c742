//! The Poincaré sphere Sⁿ ⊂ ℝⁿ⁺¹: radial projection, the northern chart,
//! the projected control system and its objects at infinity.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ode::{self, Tolerances};
use crate::spectral::{LiftedGram, SpectralData};
use crate::system::{ControlSignal, LinearSystem, TransitionCache};

/// |s_{n+1}| at or below which a point counts as lying on the equator.
pub const EQUATOR_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Hemisphere {
    Upper,
    Equator,
    Lower,
}

/// Unit vector of ℝⁿ⁺¹ under the lifted inner product.
#[derive(Clone, Debug, PartialEq)]
pub struct SpherePoint {
    s: DVector<f64>,
}

impl SpherePoint {
    /// Wraps `s`, which must have unit norm under `gram` to 1e-10; it is renormalized.
    pub fn new(s: DVector<f64>, gram: &LiftedGram) -> Result<Self> {
        if s.len() != gram.dim() {
            return Err(Error::dim("sphere point", gram.dim(), s.len()));
        }
        let nrm = gram.norm(&s);
        if !((nrm - 1.0).abs() <= 1e-10) {
            return Err(Error::input(format!("point has norm {nrm}, not 1")));
        }
        Ok(SpherePoint { s: s / nrm })
    }

    pub(crate) fn from_unit(s: DVector<f64>) -> Self {
        SpherePoint { s }
    }

    /// North pole (0, …, 0, 1) of Sⁿ.
    pub fn north_pole(n: usize) -> Self {
        let mut s = DVector::zeros(n + 1);
        s[n] = 1.0;
        SpherePoint { s }
    }

    /// Embeds a point of ℝⁿ on the equator as (x, 0), normalized under `gram`.
    pub fn on_equator(x: &DVector<f64>, gram: &LiftedGram) -> Result<Self> {
        let y = DVector::from_fn(x.len() + 1, |i, _| if i < x.len() { x[i] } else { 0.0 });
        project(gram, &y)
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.s
    }

    pub fn into_coords(self) -> DVector<f64> {
        self.s
    }

    /// n, the dimension of the sphere.
    pub fn n(&self) -> usize {
        self.s.len() - 1
    }

    /// The coordinate s_{n+1}.
    pub fn last(&self) -> f64 {
        self.s[self.n()]
    }

    /// The first n coordinates.
    pub fn head(&self) -> DVector<f64> {
        self.s.rows(0, self.n()).into_owned()
    }

    pub fn hemisphere_with(&self, tol: f64) -> Hemisphere {
        let r = self.last();
        if r > tol {
            Hemisphere::Upper
        } else if r < -tol {
            Hemisphere::Lower
        } else {
            Hemisphere::Equator
        }
    }

    pub fn hemisphere(&self) -> Hemisphere {
        self.hemisphere_with(EQUATOR_TOL)
    }

    pub fn antipode(&self) -> Self {
        SpherePoint { s: -&self.s }
    }

    /// Chordal distance in ℝⁿ⁺¹ under `gram`.
    pub fn distance(&self, other: &SpherePoint, gram: &LiftedGram) -> f64 {
        gram.norm(&(&self.s - &other.s))
    }
}

/// π(y) = y/‖y‖.
pub fn project(gram: &LiftedGram, y: &DVector<f64>) -> Result<SpherePoint> {
    if y.len() != gram.dim() {
        return Err(Error::dim("vector to project", gram.dim(), y.len()));
    }
    let nrm = gram.norm(y);
    if !(nrm >= 1e-300) || !nrm.is_finite() {
        return Err(Error::Degenerate(format!("cannot project a vector of norm {nrm}")));
    }
    Ok(SpherePoint { s: y / nrm })
}

/// φ⁺(x) = (x, 1)/‖(x, 1)‖.
pub fn chart_to_sphere(gram: &LiftedGram, x: &DVector<f64>) -> Result<SpherePoint> {
    let n = x.len();
    if n + 1 != gram.dim() {
        return Err(Error::dim("chart point", gram.dim() - 1, n));
    }
    let y = DVector::from_fn(n + 1, |i, _| if i < n { x[i] } else { 1.0 });
    project(gram, &y)
}

/// (φ⁺)⁻¹(s) = (s₁/s_{n+1}, …, s_n/s_{n+1}); defined only strictly above the equator.
pub fn sphere_to_chart(s: &SpherePoint) -> Result<DVector<f64>> {
    let r = s.last();
    if r <= EQUATOR_TOL {
        return Err(Error::NearEquator {
            last: r,
            tol: EQUATOR_TOL,
        });
    }
    Ok(s.head() / r)
}

/// The maps hᵢ(s) = Aᵢs − ⟨Aᵢs, s⟩′s of the induced system on Sⁿ.
#[derive(Clone, Debug)]
pub struct SphereVectorField {
    generators: Vec<DMatrix<f64>>,
    gram: LiftedGram,
}

impl SphereVectorField {
    pub fn new(sys: &LinearSystem, gram: LiftedGram) -> Self {
        SphereVectorField {
            generators: sys.bilinear_generators(),
            gram,
        }
    }

    pub fn generators(&self) -> &[DMatrix<f64>] {
        &self.generators
    }

    fn tangential(&self, ms: DVector<f64>, s: &DVector<f64>) -> DVector<f64> {
        let c = self.gram.inner(&ms, s);
        ms - s * c
    }

    /// hᵢ(s); index 0 is the drift.
    pub fn h(&self, i: usize, s: &DVector<f64>) -> DVector<f64> {
        self.tangential(&self.generators[i] * s, s)
    }

    /// h₀(s) + Σ vᵢhᵢ(s) for the control value `v`.
    pub fn eval(&self, s: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let mut m = self.generators[0].clone();
        for (i, vi) in v.iter().enumerate() {
            m += &self.generators[i + 1] * *vi;
        }
        self.tangential(&m * s, s)
    }

    /// |⟨h(s), s⟩′| for the control value `v`.
    pub fn tangency_residual(&self, s: &DVector<f64>, v: &DVector<f64>) -> f64 {
        self.gram.inner(&self.eval(s, v), s).abs()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    /// Transition matrices of the lift, renormalized after every step.
    ExactLift,
    /// Adaptive Dormand–Prince on the projected vector field.
    Intrinsic,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowOptions {
    pub backend: Backend,
    pub tol: Tolerances,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            backend: Backend::ExactLift,
            tol: Tolerances::default(),
        }
    }
}

impl FlowOptions {
    pub fn intrinsic() -> Self {
        FlowOptions {
            backend: Backend::Intrinsic,
            ..Default::default()
        }
    }
}

/// The induced control system on Sⁿ together with the inner product that defines it.
#[derive(Clone, Debug)]
pub struct PoincareSphere {
    sys: LinearSystem,
    gram: LiftedGram,
    field: SphereVectorField,
}

impl PoincareSphere {
    /// Sphere of the Euclidean product on ℝⁿ⁺¹.
    pub fn new(sys: LinearSystem) -> Self {
        let gram = LiftedGram::identity(sys.n());
        Self::with_gram(sys, gram)
    }

    /// Sphere of the product extending the adapted inner product of `spectral`.
    pub fn adapted(sys: LinearSystem, spectral: &SpectralData) -> Result<Self> {
        if spectral.dim() != sys.n() {
            return Err(Error::dim("spectral data", sys.n(), spectral.dim()));
        }
        Ok(Self::with_gram(sys, spectral.lifted_gram()))
    }

    pub fn with_gram(sys: LinearSystem, gram: LiftedGram) -> Self {
        let field = SphereVectorField::new(&sys, gram.clone());
        PoincareSphere { sys, gram, field }
    }

    pub fn system(&self) -> &LinearSystem {
        &self.sys
    }

    pub fn gram(&self) -> &LiftedGram {
        &self.gram
    }

    pub fn field(&self) -> &SphereVectorField {
        &self.field
    }

    pub fn n(&self) -> usize {
        self.sys.n()
    }

    pub fn project(&self, y: &DVector<f64>) -> Result<SpherePoint> {
        project(&self.gram, y)
    }

    pub fn chart_to_sphere(&self, x: &DVector<f64>) -> Result<SpherePoint> {
        chart_to_sphere(&self.gram, x)
    }

    pub fn point(&self, s: DVector<f64>) -> Result<SpherePoint> {
        SpherePoint::new(s, &self.gram)
    }

    pub fn distance(&self, a: &SpherePoint, b: &SpherePoint) -> f64 {
        a.distance(b, &self.gram)
    }

    /// πφ¹(t, s₀, u).
    pub fn flow(&self, t: f64, s0: &SpherePoint, u: &ControlSignal, opts: &FlowOptions) -> Result<SpherePoint> {
        self.propagator(u, *opts)?.advance(s0, 0.0, t)
    }

    /// Samples of the trajectory through `s0` at times 0, dt, 2dt, … up to `t_end` (either sign).
    pub fn trajectory(
        &self,
        s0: &SpherePoint,
        u: &ControlSignal,
        t_end: f64,
        dt: f64,
        opts: &FlowOptions,
    ) -> Result<Vec<(f64, SpherePoint)>> {
        if !(dt > 0.0) || !t_end.is_finite() {
            return Err(Error::Parameter("sampling step must be positive".into()));
        }
        let mut prop = self.propagator(u, *opts)?;
        let k = (t_end.abs() / dt).round().max(1.0) as usize;
        let step = t_end / k as f64;
        let mut out = Vec::with_capacity(k + 1);
        out.push((0.0, s0.clone()));
        let mut s = s0.clone();
        for i in 0..k {
            let (ta, tb) = (i as f64 * step, (i + 1) as f64 * step);
            s = prop.advance(&s, ta, tb)?;
            out.push((tb, s.clone()));
        }
        Ok(out)
    }

    /// Reusable integrator state for repeated propagation with one control signal.
    pub fn propagator<'a>(&'a self, u: &'a ControlSignal, opts: FlowOptions) -> Result<Propagator<'a>> {
        if u.dim() != self.sys.m() {
            return Err(Error::dim("control value length", self.sys.m(), u.dim()));
        }
        Ok(Propagator {
            sphere: self,
            u,
            opts,
            cache: TransitionCache::new(&self.sys),
            h: 0.0,
        })
    }

    /// First time in (t_min, t_max] at which the trajectory returns closest to `s0`.
    pub fn return_time(
        &self,
        s0: &SpherePoint,
        u: &ControlSignal,
        t_min: f64,
        t_max: f64,
        opts: &FlowOptions,
    ) -> Result<Option<f64>> {
        if !(t_min > 0.0 && t_max > t_min) {
            return Err(Error::Parameter("need 0 < t_min < t_max".into()));
        }
        let dt = 0.01;
        let mut prop = self.propagator(u, *opts)?;
        let mut s = prop.advance(s0, 0.0, t_min)?;
        let mut prev2 = f64::INFINITY;
        let mut prev1 = self.distance(&s, s0);
        let mut t = t_min;
        while t < t_max {
            s = prop.advance(&s, t, t + dt)?;
            t += dt;
            let d = self.distance(&s, s0);
            if prev1 <= prev2 && prev1 <= d && prev1 < 0.1 {
                let dist = |tau: f64| -> Result<f64> { Ok(self.distance(&self.flow(tau, s0, u, opts)?, s0)) };
                // golden-section refinement around the sampled minimum
                let (mut a, mut b) = (t - 2.0 * dt, t);
                let g = 0.5 * (5f64.sqrt() - 1.0);
                let mut c = b - g * (b - a);
                let mut e = a + g * (b - a);
                let (mut fc, mut fe) = (dist(c)?, dist(e)?);
                while b - a > 1e-9 {
                    if fc < fe {
                        b = e;
                        e = c;
                        fe = fc;
                        c = b - g * (b - a);
                        fc = dist(c)?;
                    } else {
                        a = c;
                        c = e;
                        fc = fe;
                        e = a + g * (b - a);
                        fe = dist(e)?;
                    }
                }
                return Ok(Some(0.5 * (a + b)));
            }
            prev2 = prev1;
            prev1 = d;
        }
        Ok(None)
    }
}

/// πφ¹ restricted to one control signal, with cached transitions and step size.
pub struct Propagator<'a> {
    sphere: &'a PoincareSphere,
    u: &'a ControlSignal,
    opts: FlowOptions,
    cache: TransitionCache<'a>,
    h: f64,
}

impl<'a> Propagator<'a> {
    /// Maps the state at time `ta` to the state at time `tb` (either order).
    pub fn advance(&mut self, s: &SpherePoint, ta: f64, tb: f64) -> Result<SpherePoint> {
        if !(ta.is_finite() && tb.is_finite()) {
            return Err(Error::input("time must be finite"));
        }
        let gram = &self.sphere.gram;
        let mut y = s.s.clone();
        let on_equator = y[y.len() - 1] == 0.0;
        match self.opts.backend {
            Backend::ExactLift => {
                for seg in self.u.steps(ta, tb, 1.0) {
                    y = self.cache.get(&seg.value, seg.duration)? * y;
                    let nrm = gram.norm(&y);
                    y /= nrm;
                }
            }
            Backend::Intrinsic => {
                let field = &self.sphere.field;
                for seg in self.u.segments(ta, tb) {
                    let v = seg.value.clone();
                    ode::integrate(
                        |z| field.eval(z, &v),
                        &mut y,
                        seg.duration,
                        &self.opts.tol,
                        &mut self.h,
                        |z| {
                            let nrm = gram.norm(z);
                            *z /= nrm;
                        },
                    )
                    .map_err(|e| shift_time(e, ta))?;
                }
            }
        }
        debug_assert!(!on_equator || y[y.len() - 1] == 0.0);
        Ok(SpherePoint { s: y })
    }
}

fn shift_time(e: Error, t0: f64) -> Error {
    match e {
        Error::Range { what, time } => Error::Range { what, time: time + t0 },
        other => other,
    }
}

/// Convenience wrapper for [`PoincareSphere::flow`].
pub fn sphere_flow(
    sphere: &PoincareSphere,
    t: f64,
    s0: &SpherePoint,
    u: &ControlSignal,
    opts: &FlowOptions,
) -> Result<SpherePoint> {
    sphere.flow(t, s0, u, opts)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InfinityKind {
    /// A projected real eigendirection ±v.
    Equilibrium,
    /// Unit circle of the real invariant plane of a simple complex pair.
    Circle,
    /// Unit sphere of a higher-dimensional eigenspace.
    Continuum,
}

/// Invariant object of the drift on the equator Sⁿ'⁰.
#[derive(Clone, Debug)]
pub struct InfinityObject {
    pub kind: InfinityKind,
    /// Embedded basis (last row zero), orthonormal under the lifted product;
    /// for an equilibrium the single column is the point itself.
    pub basis: DMatrix<f64>,
    /// Eigenvalue (real, imaginary part ≥ 0).
    pub eigenvalue: (f64, f64),
    /// Angular frequency of the orbit (0 for equilibria and real continua).
    pub frequency: f64,
    /// Growth rates of the linearization in the directions transverse to the
    /// object's radial direction, including the direction off the equator; descending.
    pub transverse_rates: Vec<f64>,
}

impl InfinityObject {
    pub fn point(&self) -> Option<SpherePoint> {
        (self.kind == InfinityKind::Equilibrium).then(|| SpherePoint::from_unit(self.basis.column(0).into_owned()))
    }

    /// Distance from `s` to the object on the sphere.
    pub fn distance(&self, s: &SpherePoint, gram: &LiftedGram) -> f64 {
        if self.kind == InfinityKind::Equilibrium {
            return gram.norm(&(s.coords() - self.basis.column(0)));
        }
        let coeff = DVector::from_fn(self.basis.ncols(), |j, _| gram.inner(&self.basis.column(j).into_owned(), s.coords()));
        let p = &self.basis * coeff;
        let np = gram.norm(&p);
        if np < 1e-300 {
            return std::f64::consts::SQRT_2;
        }
        gram.norm(&(s.coords() - p / np))
    }

    /// All points on the object are asymptotically stable in the transverse directions
    /// (ignoring the neutral directions along the object itself).
    pub fn is_transversally_stable(&self) -> bool {
        let along = match self.kind {
            InfinityKind::Equilibrium => 0,
            _ => self.basis.ncols() - 1,
        };
        let rates = &self.transverse_rates;
        let neutral = rates.iter().filter(|r| r.abs() < 1e-9).count();
        neutral <= along && rates.iter().all(|r| *r < 1e-9)
    }
}

fn null_space(k: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let n = k.ncols();
    let svd = k.clone().svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let cols: Vec<DVector<f64>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, s)| **s <= tol)
        .map(|(i, _)| vt.row(i).transpose())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

fn g_orthonormal(cols: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out: Vec<DVector<f64>> = Vec::new();
    for j in 0..cols.ncols() {
        let mut v = cols.column(j).into_owned();
        for q in &out {
            let c = (q.transpose() * g * &v)[(0, 0)];
            v -= q * c;
        }
        let nrm = (v.transpose() * g * &v)[(0, 0)].max(0.0).sqrt();
        if nrm > 1e-10 {
            // canonical sign: first significant entry positive
            let pivot = v.iter().copied().find(|x| x.abs() > 1e-9).unwrap_or(1.0);
            out.push(v * (pivot.signum() / nrm));
        }
    }
    if out.is_empty() {
        DMatrix::zeros(cols.nrows(), 0)
    } else {
        DMatrix::from_columns(&out)
    }
}

fn embed(basis: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, k) = basis.shape();
    let mut e = DMatrix::zeros(n + 1, k);
    e.view_mut((0, 0), (n, k)).copy_from(basis);
    e
}

/// Equilibria and invariant circles/continua of the drift on the equator,
/// one entry per real eigenvalue sign (±v) or complex pair.
pub fn equilibria_at_infinity(sys: &LinearSystem, spectral: &SpectralData) -> Result<Vec<InfinityObject>> {
    let a = sys.a();
    let n = sys.n();
    if spectral.dim() != n {
        return Err(Error::dim("spectral data", n, spectral.dim()));
    }
    let scale = a.amax().max(1.0);
    let cluster_tol = 1e-6 * scale;
    // distinct eigenvalues with imaginary part ≥ 0
    let mut distinct: Vec<(f64, f64)> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for &(re, im) in &spectral.eigenvalues {
        let im = im.abs();
        match distinct
            .iter()
            .position(|&(r, i)| (r - re).abs() <= cluster_tol && (i - im).abs() <= cluster_tol)
        {
            Some(p) => counts[p] += 1,
            None => {
                distinct.push((re, im));
                counts.push(1);
            }
        }
    }
    let all: Vec<(f64, f64)> = spectral.eigenvalues.clone();
    let rates_for = |mu: (f64, f64)| -> Vec<f64> {
        let mut rest: Vec<f64> = Vec::with_capacity(n);
        let mut skipped = false;
        for &(re, im) in &all {
            if !skipped && (re - mu.0).abs() <= cluster_tol && (im.abs() - mu.1).abs() <= cluster_tol {
                skipped = true;
                continue;
            }
            rest.push(re - mu.0);
        }
        rest.push(-mu.0);
        for r in &mut rest {
            if r.abs() < cluster_tol {
                *r = 0.0;
            }
        }
        rest.sort_by(|x, y| y.total_cmp(x));
        rest
    };

    let mut out = Vec::new();
    for &(re, im) in &distinct {
        let rates = rates_for((re, im));
        if im <= cluster_tol {
            let k = a - DMatrix::identity(n, n) * re;
            let ns = g_orthonormal(&null_space(&k, 1e-7 * scale), &spectral.gram);
            let basis = embed(&ns);
            if ns.ncols() == 1 {
                for sign in [1.0, -1.0] {
                    out.push(InfinityObject {
                        kind: InfinityKind::Equilibrium,
                        basis: &basis * sign,
                        eigenvalue: (re, 0.0),
                        frequency: 0.0,
                        transverse_rates: rates.clone(),
                    });
                }
            } else if ns.ncols() > 1 {
                out.push(InfinityObject {
                    kind: InfinityKind::Continuum,
                    basis,
                    eigenvalue: (re, 0.0),
                    frequency: 0.0,
                    transverse_rates: rates,
                });
            }
        } else {
            let shifted = a - DMatrix::identity(n, n) * re;
            let k = &shifted * &shifted + DMatrix::identity(n, n) * (im * im);
            let ns = g_orthonormal(&null_space(&k, 1e-7 * scale * scale), &spectral.gram);
            if ns.ncols() == 0 {
                continue;
            }
            out.push(InfinityObject {
                kind: if ns.ncols() == 2 {
                    InfinityKind::Circle
                } else {
                    InfinityKind::Continuum
                },
                basis: embed(&ns),
                eigenvalue: (re, im),
                frequency: im,
                transverse_rates: rates,
            });
        }
    }
    Ok(out)
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

    fn example1() -> LinearSystem {
        sys(&[vec![1.0, 0.0], vec![0.0, -1.0]])
    }

    fn example4() -> LinearSystem {
        sys(&[vec![1.0, 1.0, 0.0], vec![-1.0, 1.0, 0.0], vec![0.0, 0.0, -1.0]])
    }

    #[test]
    fn projection_examples() {
        let g = LiftedGram::identity(2);
        assert_eq!(project(&g, &v(&[0.0, 0.0, 1.0])).unwrap().coords(), &v(&[0.0, 0.0, 1.0]));
        let p = project(&g, &v(&[3.0, 4.0, 0.0])).unwrap();
        assert!((p.coords() - v(&[0.6, 0.8, 0.0])).norm() < 1e-15);
        assert!(matches!(project(&g, &v(&[0.0, 0.0, 0.0])), Err(Error::Degenerate(_))));
        let x = v(&[0.3, -2.0]);
        let h1 = project(&g, &v(&[0.3, -2.0, 1.0])).unwrap();
        assert_eq!(chart_to_sphere(&g, &x).unwrap(), h1);
    }

    #[test]
    fn chart_examples() {
        let g = LiftedGram::identity(2);
        assert_eq!(chart_to_sphere(&g, &v(&[0.0, 0.0])).unwrap(), SpherePoint::north_pole(2));
        let s = chart_to_sphere(&g, &v(&[1.0, 0.0])).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((s.coords() - v(&[r, 0.0, r])).norm() < 1e-15);
        let s = SpherePoint::new(v(&[0.6, 0.0, 0.8]), &g).unwrap();
        assert!((sphere_to_chart(&s).unwrap() - v(&[0.75, 0.0])).norm() < 1e-15);
        let eq = SpherePoint::new(v(&[1.0, 0.0, 0.0]), &g).unwrap();
        assert!(matches!(sphere_to_chart(&eq), Err(Error::NearEquator { .. })));
        assert_eq!(eq.hemisphere(), Hemisphere::Equator);
        assert_eq!(eq.antipode().hemisphere(), Hemisphere::Equator);
        assert_eq!(s.antipode().hemisphere(), Hemisphere::Lower);
    }

    #[test]
    fn vector_field_is_tangent() {
        let sp = PoincareSphere::new(example4());
        let s = sp.project(&v(&[0.3, -0.2, 0.9, 0.1])).unwrap();
        for u in [-1.0, 0.0, 0.7] {
            assert!(sp.field().tangency_residual(s.coords(), &v(&[u])) < 1e-15);
        }
        let eq = sp.project(&v(&[0.3, -0.2, 0.9, 0.0])).unwrap();
        assert_eq!(sp.field().eval(eq.coords(), &v(&[1.0]))[3], 0.0);
    }

    #[test]
    fn example4_periodic_orbit() {
        let sp = PoincareSphere::new(example4());
        let s0 = sp.point(v(&[0.0, 1.0, 0.0, 0.0])).unwrap();
        let u = ControlSignal::constant(vec![0.6]);
        let traj = sp.trajectory(&s0, &u, 10.0, 0.5, &FlowOptions::default()).unwrap();
        for (t, s) in &traj {
            let expect = v(&[t.sin(), t.cos(), 0.0, 0.0]);
            assert!((s.coords() - expect).norm() < 1e-9, "t = {t}");
            assert_eq!(s.last(), 0.0);
        }
        let rt = sp
            .return_time(&s0, &ControlSignal::zero(1), 1.0, 10.0, &FlowOptions::default())
            .unwrap()
            .unwrap();
        assert!((rt - std::f64::consts::TAU).abs() < 1e-3, "{rt}");
    }

    #[test]
    fn backends_agree() {
        let sp = PoincareSphere::new(example4());
        let s0 = sp.project(&v(&[0.2, -0.5, 0.4, 0.7])).unwrap();
        let u = ControlSignal::periodic(3.0, vec![1.5], vec![vec![1.0], vec![-1.0]]).unwrap();
        for t in [-5.0, 2.0, 20.0] {
            let a = sp.flow(t, &s0, &u, &FlowOptions::default()).unwrap();
            let b = sp.flow(t, &s0, &u, &FlowOptions::intrinsic()).unwrap();
            assert!(sp.distance(&a, &b) < 1e-6, "t = {t}: {}", sp.distance(&a, &b));
            assert!((sp.gram().norm(b.coords()) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn controls_act_trivially_on_equator() {
        let sp = PoincareSphere::new(example4());
        let s0 = sp.project(&v(&[0.2, -0.5, 0.4, 0.0])).unwrap();
        let u = ControlSignal::constant(vec![1.0]);
        for opts in [FlowOptions::default(), FlowOptions::intrinsic()] {
            let a = sp.flow(7.0, &s0, &u, &opts).unwrap();
            let b = sp.flow(7.0, &s0, &ControlSignal::zero(1), &opts).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.last(), 0.0);
        }
    }

    #[test]
    fn example1_stable_equilibrium() {
        let sp = PoincareSphere::new(example1());
        for x in [[0.5, 0.5], [-3.0, 2.0], [1e-3, -4.0]] {
            let s0 = sp.chart_to_sphere(&v(&x)).unwrap();
            let target = if x[0] > 0.0 { 1.0 } else { -1.0 };
            let s = sp.flow(100.0, &s0, &ControlSignal::zero(1), &FlowOptions::default()).unwrap();
            assert!((s.coords() - v(&[target, 0.0, 0.0])).norm() < 1e-3);
        }
    }

    #[test]
    fn example1_equilibria() {
        let s = example1();
        let sd = spectral_decompose(s.a(), DEFAULT_GROUP_TOL).unwrap();
        let objs = equilibria_at_infinity(&s, &sd).unwrap();
        assert_eq!(objs.len(), 4);
        let pts: Vec<DVector<f64>> = objs.iter().map(|o| o.point().unwrap().into_coords()).collect();
        for p in [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -1.0, 0.0]] {
            assert!(pts.iter().any(|q| (q - v(&p)).norm() < 1e-12));
        }
        for o in &objs {
            let stable = o.is_transversally_stable();
            assert_eq!(stable, o.eigenvalue.0 > 0.0);
        }
    }

    #[test]
    fn rotation_has_circle_only() {
        let s = sys(&[vec![0.0, 1.0], vec![-1.0, 0.0]]);
        let sd = spectral_decompose(s.a(), DEFAULT_GROUP_TOL).unwrap();
        let objs = equilibria_at_infinity(&s, &sd).unwrap();
        assert_eq!(objs.len(), 1);
        assert_eq!(objs[0].kind, InfinityKind::Circle);
        assert!((objs[0].frequency - 1.0).abs() < 1e-12);
    }

    #[test]
    fn example4_circle_and_poles() {
        let s = example4();
        let sd = spectral_decompose(s.a(), DEFAULT_GROUP_TOL).unwrap();
        let objs = equilibria_at_infinity(&s, &sd).unwrap();
        let circle = objs.iter().find(|o| o.kind == InfinityKind::Circle).unwrap();
        assert!(circle.is_transversally_stable());
        let g = sd.lifted_gram();
        let on = SpherePoint::new(v(&[0.6, 0.8, 0.0, 0.0]), &g).unwrap();
        assert!(circle.distance(&on, &g) < 1e-12);
        assert_eq!(objs.iter().filter(|o| o.kind == InfinityKind::Equilibrium).count(), 2);
    }

    #[test]
    fn jordan_block_gives_single_direction() {
        let s = sys(&[vec![1.0, 1.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, -1.0]]);
        let sd = spectral_decompose(s.a(), DEFAULT_GROUP_TOL).unwrap();
        let objs = equilibria_at_infinity(&s, &sd).unwrap();
        assert_eq!(objs.len(), 4);
        assert!(objs.iter().all(|o| o.kind == InfinityKind::Equilibrium));
    }

    #[test]
    fn repeated_eigenvalue_is_continuum() {
        let s = sys(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let sd = spectral_decompose(s.a(), DEFAULT_GROUP_TOL).unwrap();
        let objs = equilibria_at_infinity(&s, &sd).unwrap();
        assert_eq!(objs.len(), 1);
        assert_eq!(objs[0].kind, InfinityKind::Continuum);
    }
}
