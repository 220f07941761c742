//! Eigenstructure of the state matrix: Lyapunov exponents (distinct real
//! parts of eigenvalues), the Lyapunov spaces, spectral projections onto the
//! unstable/center/stable parts and an inner product that makes the
//! Lyapunov spaces pairwise orthogonal.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Default tolerance for clustering eigenvalue real parts into one exponent.
pub const DEFAULT_GROUP_TOL: f64 = 1e-8;

/// Lyapunov decomposition of a real square matrix.
#[derive(Clone, Debug)]
pub struct SpectralData {
    /// Strictly decreasing Lyapunov exponents.
    pub exponents: Vec<f64>,
    /// Basis of each Lyapunov space as matrix columns, orthonormal under `gram`.
    pub spaces: Vec<DMatrix<f64>>,
    /// Spectral projection onto each Lyapunov space along the others.
    pub projections: Vec<DMatrix<f64>>,
    /// Index of the exponent that is treated as zero, if any.
    pub center_index: Option<usize>,
    pub proj_center: DMatrix<f64>,
    pub proj_hyperbolic: DMatrix<f64>,
    pub proj_plus: DMatrix<f64>,
    pub proj_minus: DMatrix<f64>,
    /// Symmetric positive definite matrix of the adapted inner product.
    pub gram: DMatrix<f64>,
    /// Eigenvalues of the matrix as (real, imaginary) pairs, sorted by real part.
    pub eigenvalues: Vec<(f64, f64)>,
    pub group_tol: f64,
    /// Non-fatal diagnostics such as ambiguous clusters.
    pub warnings: Vec<String>,
}

impl SpectralData {
    pub fn dim(&self) -> usize {
        self.gram.nrows()
    }

    pub fn space_dim(&self, i: usize) -> usize {
        self.spaces[i].ncols()
    }

    /// Index of the exponent matching `lambda` within the grouping tolerance.
    pub fn index_of(&self, lambda: f64) -> Option<usize> {
        let tol = self.group_tol.max(1e-9 * lambda.abs());
        self.exponents
            .iter()
            .position(|&l| (l - lambda).abs() <= tol.max(1e-6))
    }

    pub fn has_hyperbolic_part(&self) -> bool {
        self.exponents
            .iter()
            .enumerate()
            .any(|(i, _)| Some(i) != self.center_index)
    }

    /// Smallest modulus of a nonzero exponent (the dichotomy rate).
    pub fn hyperbolic_gap(&self) -> Option<f64> {
        self.exponents
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != self.center_index)
            .map(|(_, l)| l.abs())
            .min_by(|a, b| a.total_cmp(b))
    }

    pub fn center_dim(&self) -> usize {
        self.center_index.map_or(0, |i| self.space_dim(i))
    }

    pub fn inner(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        (x.transpose() * &self.gram * y)[(0, 0)]
    }

    pub fn norm(&self, x: &DVector<f64>) -> f64 {
        self.inner(x, x).max(0.0).sqrt()
    }

    pub fn lifted_gram(&self) -> LiftedGram {
        LiftedGram::from_gram(&self.gram)
    }

    /// Basis of the center space L⁰ (possibly with zero columns).
    pub fn center_basis(&self) -> DMatrix<f64> {
        match self.center_index {
            Some(i) => self.spaces[i].clone(),
            None => DMatrix::zeros(self.dim(), 0),
        }
    }

    /// Residual of `x` after projecting onto L(λᵢ), relative to ‖x‖.
    pub fn membership_residual(&self, i: usize, x: &DVector<f64>) -> f64 {
        let nx = x.norm();
        if nx == 0.0 {
            return 0.0;
        }
        (x - &self.projections[i] * x).norm() / nx
    }

    /// Checks the structural invariants of the decomposition against `a`.
    pub fn check_invariants(&self, a: &DMatrix<f64>) -> std::result::Result<(), String> {
        let n = self.dim();
        let total: usize = self.spaces.iter().map(|s| s.ncols()).sum();
        if total != n {
            return Err(format!("space dimensions sum to {total}, expected {n}"));
        }
        for w in self.exponents.windows(2) {
            if w[0] <= w[1] {
                return Err("exponents not strictly decreasing".into());
            }
        }
        for (i, basis) in self.spaces.iter().enumerate() {
            for c in basis.column_iter() {
                let aw = a * c;
                let scale = aw.norm();
                let res = (&aw - &self.projections[i] * &aw).norm();
                if res > 1e-8 * scale.max(1e-300) && res > 1e-12 {
                    return Err(format!("space {i} not A-invariant (residual {res:e})"));
                }
            }
        }
        let id = DMatrix::<f64>::identity(n, n);
        let checks = [
            ("center+hyperbolic", (&self.proj_center + &self.proj_hyperbolic - &id).amax()),
            (
                "plus+minus",
                (&self.proj_plus + &self.proj_minus - &self.proj_hyperbolic).amax(),
            ),
        ];
        for (name, err) in checks {
            if err > 1e-10 {
                return Err(format!("{name} projection identity violated ({err:e})"));
            }
        }
        for p in [&self.proj_center, &self.proj_hyperbolic, &self.proj_plus, &self.proj_minus]
            .into_iter()
            .chain(self.projections.iter())
        {
            let err = (p * p - p).amax();
            if err > 1e-10 * p.amax().max(1.0) {
                return Err(format!("projection not idempotent ({err:e})"));
            }
        }
        for i in 0..self.spaces.len() {
            for j in (i + 1)..self.spaces.len() {
                for x in self.spaces[i].column_iter() {
                    for y in self.spaces[j].column_iter() {
                        let (x, y) = (x.into_owned(), y.into_owned());
                        let ip = self.inner(&x, &y) / (self.norm(&x) * self.norm(&y));
                        if ip.abs() > 1e-8 {
                            return Err(format!("spaces {i},{j} not G-orthogonal ({ip:e})"));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Inner product on ℝⁿ⁺¹ extending an inner product `G` on ℝⁿ by the
/// Euclidean product in the last coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct LiftedGram {
    matrix: DMatrix<f64>,
    identity: bool,
}

impl LiftedGram {
    pub fn identity(n: usize) -> Self {
        LiftedGram {
            matrix: DMatrix::identity(n + 1, n + 1),
            identity: true,
        }
    }

    pub fn from_gram(g: &DMatrix<f64>) -> Self {
        let n = g.nrows();
        let mut m = DMatrix::zeros(n + 1, n + 1);
        m.view_mut((0, 0), (n, n)).copy_from(g);
        m[(n, n)] = 1.0;
        let identity = m == DMatrix::identity(n + 1, n + 1);
        LiftedGram { matrix: m, identity }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Dimension of the lifted space, n + 1.
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_identity(&self) -> bool {
        self.identity
    }

    pub fn inner(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        if self.identity {
            x.dot(y)
        } else {
            (x.transpose() * &self.matrix * y)[(0, 0)]
        }
    }

    pub fn norm(&self, x: &DVector<f64>) -> f64 {
        self.inner(x, x).max(0.0).sqrt()
    }
}

/// e^{Mt}, backed by a Padé scaling-and-squaring implementation.
pub fn matrix_exponential(m: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::dim("matrix_exponential", "square", format!("{}x{}", m.nrows(), m.ncols())));
    }
    if !t.is_finite() || m.iter().any(|x| !x.is_finite()) {
        return Err(Error::input("non-finite entries in matrix exponential"));
    }
    let mt = m * t;
    let norm = mt.norm();
    // Extra squarings outside the Padé routine so that overflow surfaces as
    // non-finite entries instead of a singular solve.
    let extra = if norm > 64.0 { (norm / 32.0).log2().ceil() as i32 } else { 0 };
    let mut e = (mt / 2f64.powi(extra)).exp();
    for _ in 0..extra {
        e = &e * &e;
        if e.iter().any(|x| !x.is_finite()) {
            break;
        }
    }
    if e.iter().any(|x| !x.is_finite()) {
        return Err(Error::Range {
            what: "matrix exponential overflow".into(),
            time: t,
        });
    }
    Ok(e)
}

/// Matrix sign function by scaled Newton iteration.
fn matrix_sign(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    let mut cur = x.clone();
    for it in 0..200 {
        let inv = cur
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Degenerate("singular shifted matrix in sign iteration".into()))?;
        // determinant scaling in the early phase only; near convergence it
        // would slow the quadratic tail
        let mu = if it < 10 {
            let det = cur.determinant().abs();
            if det > 0.0 && det.is_finite() {
                det.powf(-1.0 / n as f64)
            } else {
                1.0
            }
        } else {
            1.0
        };
        let next = (&cur * mu + &inv / mu) * 0.5;
        let diff = (&next - &cur).norm();
        let scale = next.norm();
        cur = next;
        if diff <= 1e-14 * scale {
            return Ok(cur);
        }
    }
    Ok(cur)
}

/// Orthonormal basis of the column range of `p` with the given dimension.
fn range_basis(p: &DMatrix<f64>, dim: usize) -> DMatrix<f64> {
    let n = p.nrows();
    if dim == 0 {
        return DMatrix::zeros(n, 0);
    }
    // pivoted Gram-Schmidt on the columns of p (twice, for orthogonality);
    // the SVD's U loses ~1e-7 of invariance on nearly defective blocks
    let mut cols: Vec<DVector<f64>> = p.column_iter().map(|c| c.into_owned()).collect();
    let mut basis = DMatrix::zeros(n, dim);
    for k in 0..dim {
        let j = (0..cols.len())
            .max_by(|&x, &y| cols[x].norm_squared().total_cmp(&cols[y].norm_squared()))
            .expect("non-empty");
        let mut c = cols.swap_remove(j);
        for _ in 0..2 {
            for i in 0..k {
                let b = basis.column(i).into_owned();
                c -= &b * b.dot(&c);
            }
        }
        c /= c.norm();
        canonical_sign(&mut c);
        for r in cols.iter_mut() {
            *r -= &c * c.dot(r);
        }
        basis.set_column(k, &c);
    }
    basis
}

/// Flips the sign so that the entry of largest modulus is positive.
fn canonical_sign(v: &mut DVector<f64>) {
    let mut best = 0;
    for i in 0..v.len() {
        if v[i].abs() > v[best].abs() + 1e-12 {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.neg_mut();
    }
}

/// Modified Gram-Schmidt on columns; returns None on rank loss.
fn orthonormalize(b: &DMatrix<f64>, tol: f64) -> Option<DMatrix<f64>> {
    let mut q = b.clone();
    for j in 0..q.ncols() {
        let mut v = q.column(j).into_owned();
        let scale = v.norm();
        for k in 0..j {
            let qk = q.column(k).into_owned();
            let r = qk.dot(&v);
            v -= qk * r;
        }
        let nv = v.norm();
        if nv <= tol * scale.max(1e-300) || nv == 0.0 {
            return None;
        }
        q.set_column(j, &(v / nv));
    }
    Some(q)
}

/// Inner product under which the given subspaces are pairwise orthogonal.
///
/// Each basis is orthonormalized first; if the spaces are already pairwise
/// Euclidean-orthogonal the identity is returned.
pub fn adapted_gram(spaces: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let n = spaces.first().map(|s| s.nrows()).unwrap_or(0);
    let total: usize = spaces.iter().map(|s| s.ncols()).sum();
    if total != n || spaces.iter().any(|s| s.nrows() != n) {
        return Err(Error::input(format!(
            "spaces have total dimension {total} in ambient dimension {n}"
        )));
    }
    let mut ortho = Vec::with_capacity(spaces.len());
    for s in spaces {
        ortho.push(orthonormalize(s, 1e-10).ok_or_else(|| Error::input("rank-deficient basis"))?);
    }
    let mut all_orthogonal = true;
    for i in 0..ortho.len() {
        for j in (i + 1)..ortho.len() {
            let cross = ortho[i].transpose() * &ortho[j];
            if cross.amax() > 1e-12 {
                all_orthogonal = false;
            }
        }
    }
    if all_orthogonal {
        return Ok(DMatrix::identity(n, n));
    }
    let s = concat_columns(&ortho, n);
    let sinv = s
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::input("rank-deficient basis collection"))?;
    let cond = s.norm() * sinv.norm();
    if !cond.is_finite() || cond > 1e12 {
        return Err(Error::input("rank-deficient basis collection"));
    }
    let g = sinv.transpose() * &sinv;
    Ok((&g + g.transpose()) * 0.5)
}

fn concat_columns(blocks: &[DMatrix<f64>], n: usize) -> DMatrix<f64> {
    let total: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut s = DMatrix::zeros(n, total);
    let mut col = 0;
    for b in blocks {
        s.view_mut((0, col), (n, b.ncols())).copy_from(b);
        col += b.ncols();
    }
    s
}

/// Computes the Lyapunov decomposition of `a`.
///
/// Eigenvalue real parts closer than `group_tol` are merged into one
/// exponent; an exponent with modulus below `group_tol` is set to zero.
pub fn spectral_decompose(a: &DMatrix<f64>, group_tol: f64) -> Result<SpectralData> {
    if !a.is_square() {
        return Err(Error::dim("A", "square", format!("{}x{}", a.nrows(), a.ncols())));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::input("non-finite entries in A"));
    }
    if !(group_tol > 0.0) {
        return Err(Error::Parameter("group_tol must be positive".into()));
    }
    let n = a.nrows();
    if n == 0 {
        return Err(Error::input("empty matrix"));
    }

    let eig = a.clone().complex_eigenvalues();
    let mut eigenvalues: Vec<(f64, f64)> = eig.iter().map(|c| (c.re, c.im)).collect();
    eigenvalues.sort_by(|x, y| y.0.total_cmp(&x.0).then(y.1.total_cmp(&x.1)));

    // clusters of real parts, descending
    let mut warnings = Vec::new();
    let mut clusters: Vec<Vec<f64>> = Vec::new();
    for &(re, _) in &eigenvalues {
        match clusters.last_mut() {
            Some(c) if (c[c.len() - 1] - re).abs() <= group_tol => c.push(re),
            Some(c) => {
                let gap = (c[c.len() - 1] - re).abs();
                if gap <= 2.0 * group_tol {
                    warnings.push(format!(
                        "ambiguous clustering: real parts {} and {} differ by {gap:e}",
                        c[c.len() - 1],
                        re
                    ));
                }
                clusters.push(vec![re]);
            }
            None => clusters.push(vec![re]),
        }
    }
    let mut exponents: Vec<f64> = clusters
        .iter()
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    let mut center_index = None;
    for (i, l) in exponents.iter_mut().enumerate() {
        if l.abs() < group_tol {
            *l = 0.0;
            center_index = Some(i);
        }
    }
    let dims: Vec<usize> = clusters.iter().map(|c| c.len()).collect();

    // P_k: spectral projector onto eigenvalues with real part above the k-th cut
    let id = DMatrix::<f64>::identity(n, n);
    let mut above: Vec<DMatrix<f64>> = vec![DMatrix::zeros(n, n)];
    for k in 0..exponents.len().saturating_sub(1) {
        let cut = 0.5 * (clusters[k][clusters[k].len() - 1] + clusters[k + 1][0]);
        let shifted = a - &id * cut;
        let sign = matrix_sign(&shifted)?;
        above.push((&id + sign) * 0.5);
    }
    above.push(id.clone());

    let mut raw_spaces = Vec::with_capacity(exponents.len());
    for k in 0..exponents.len() {
        let p = &above[k + 1] - &above[k];
        raw_spaces.push(range_basis(&p, dims[k]));
    }

    let gram = adapted_gram(&raw_spaces)?;
    // bases G-orthonormal: for identity gram the Euclidean bases already are
    let spaces: Vec<DMatrix<f64>> = if gram == DMatrix::identity(n, n) {
        raw_spaces
    } else {
        raw_spaces
            .iter()
            .map(|s| g_orthonormalize(s, &gram))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::Degenerate("lost rank during G-orthonormalization".into()))?
    };

    let s = concat_columns(&spaces, n);
    let sinv = s
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("Lyapunov bases do not span the space".into()))?;
    let mut projections = Vec::with_capacity(spaces.len());
    let mut col = 0;
    for sp in &spaces {
        let d = sp.ncols();
        let rows = sinv.rows(col, d).into_owned();
        projections.push(sp * rows);
        col += d;
    }

    let zero = DMatrix::<f64>::zeros(n, n);
    let mut proj_plus = zero.clone();
    let mut proj_minus = zero.clone();
    let mut proj_center = zero.clone();
    for (i, p) in projections.iter().enumerate() {
        if Some(i) == center_index {
            proj_center += p;
        } else if exponents[i] > 0.0 {
            proj_plus += p;
        } else {
            proj_minus += p;
        }
    }
    let proj_hyperbolic = &proj_plus + &proj_minus;

    Ok(SpectralData {
        exponents,
        spaces,
        projections,
        center_index,
        proj_center,
        proj_hyperbolic,
        proj_plus,
        proj_minus,
        gram,
        eigenvalues,
        group_tol,
        warnings,
    })
}

fn g_orthonormalize(b: &DMatrix<f64>, g: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let mut q = b.clone();
    let ip = |x: &DVector<f64>, y: &DVector<f64>| (x.transpose() * g * y)[(0, 0)];
    for j in 0..q.ncols() {
        let mut v = q.column(j).into_owned();
        for k in 0..j {
            let qk = q.column(k).into_owned();
            let r = ip(&qk, &v);
            v -= qk * r;
        }
        let nv = ip(&v, &v).sqrt();
        if !(nv > 1e-12) {
            return None;
        }
        q.set_column(j, &(v / nv));
    }
    Some(q)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> DMatrix<f64> {
        let n = rows.len();
        let m = rows[0].len();
        DMatrix::from_fn(n, m, |i, j| rows[i][j])
    }

    fn spans_equal(basis: &DMatrix<f64>, expected: &DMatrix<f64>) -> bool {
        let proj = |b: &DMatrix<f64>| {
            let q = orthonormalize(b, 1e-12).unwrap();
            &q * q.transpose()
        };
        (proj(basis) - proj(expected)).amax() < 1e-9
    }

    #[test]
    fn diagonal_three_exponents() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0, -1.0]));
        let sd = spectral_decompose(&a, DEFAULT_GROUP_TOL).unwrap();
        assert_eq!(sd.exponents, vec![2.0, 1.0, -1.0]);
        let id = DMatrix::<f64>::identity(3, 3);
        for k in 0..3 {
            assert!(spans_equal(&sd.spaces[k], &id.columns(k, 1).into_owned()));
        }
        assert_eq!(sd.gram, id);
        assert!(sd.center_index.is_none());
        sd.check_invariants(&a).unwrap();
    }

    #[test]
    fn zero_matrix_is_all_center() {
        let a = DMatrix::<f64>::zeros(3, 3);
        let sd = spectral_decompose(&a, DEFAULT_GROUP_TOL).unwrap();
        assert_eq!(sd.exponents, vec![0.0]);
        assert_eq!(sd.center_index, Some(0));
        assert_eq!(sd.space_dim(0), 3);
        assert!(sd.proj_hyperbolic.amax() < 1e-15);
        assert!(!sd.has_hyperbolic_part());
        sd.check_invariants(&a).unwrap();
    }

    #[test]
    fn complex_pair_plane() {
        let a = mat(&[&[1.0, 1.0, 0.0], &[-1.0, 1.0, 0.0], &[0.0, 0.0, -1.0]]);
        let sd = spectral_decompose(&a, DEFAULT_GROUP_TOL).unwrap();
        assert_eq!(sd.exponents.len(), 2);
        assert!((sd.exponents[0] - 1.0).abs() < 1e-12);
        assert!((sd.exponents[1] + 1.0).abs() < 1e-12);
        let e12 = mat(&[&[1.0, 0.0], &[0.0, 1.0], &[0.0, 0.0]]);
        assert!(spans_equal(&sd.spaces[0], &e12));
        sd.check_invariants(&a).unwrap();
    }

    #[test]
    fn jordan_block_example() {
        let a = mat(&[&[1.0, 1.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, -1.0]]);
        let sd = spectral_decompose(&a, DEFAULT_GROUP_TOL).unwrap();
        assert_eq!(sd.space_dim(0), 2);
        assert_eq!(sd.space_dim(1), 1);
        // coordinate-aligned spaces give the Euclidean product
        assert_eq!(sd.gram, DMatrix::identity(3, 3));
        sd.check_invariants(&a).unwrap();
    }

    #[test]
    fn oblique_spaces_get_adapted_gram() {
        // eigenvectors (1,0) for 1 and (1,1) for -1
        let a = mat(&[&[1.0, -2.0], &[0.0, -1.0]]);
        let sd = spectral_decompose(&a, DEFAULT_GROUP_TOL).unwrap();
        assert_ne!(sd.gram, DMatrix::identity(2, 2));
        sd.check_invariants(&a).unwrap();
        let x = sd.spaces[0].column(0).into_owned();
        let y = sd.spaces[1].column(0).into_owned();
        assert!(sd.inner(&x, &y).abs() < 1e-12);
        assert!((sd.norm(&x) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adapted_gram_symmetric_case() {
        let s1 = mat(&[&[1.0], &[1.0]]);
        let s2 = mat(&[&[1.0], &[-1.0]]);
        let g = adapted_gram(&[s1.clone(), s2.clone()]).unwrap();
        assert_eq!(g, DMatrix::identity(2, 2));
        let s3 = mat(&[&[1.0], &[0.0]]);
        let g = adapted_gram(&[s1.clone(), s3]).unwrap();
        let x = s1.column(0).into_owned();
        let y = DVector::from_vec(vec![1.0, 0.0]);
        assert!((x.transpose() * &g * y)[(0, 0)].abs() < 1e-12);
        assert!(g.clone().cholesky().is_some());
    }

    #[test]
    fn adapted_gram_rejects_rank_deficiency() {
        let s1 = mat(&[&[1.0], &[1.0]]);
        let s2 = mat(&[&[2.0], &[2.0]]);
        assert!(adapted_gram(&[s1, s2]).is_err());
        assert!(adapted_gram(&[mat(&[&[1.0], &[0.0]])]).is_err());
    }

    #[test]
    fn non_finite_rejected() {
        let a = mat(&[&[f64::NAN, 0.0], &[0.0, 1.0]]);
        assert!(matches!(spectral_decompose(&a, 1e-8), Err(Error::Input(_))));
    }

    #[test]
    fn ambiguous_cluster_warning() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0 + 1.5e-8]));
        let sd = spectral_decompose(&a, 1e-8).unwrap();
        assert_eq!(sd.exponents.len(), 2);
        assert_eq!(sd.warnings.len(), 1);
    }

    #[test]
    fn exponential_examples() {
        let z = DMatrix::<f64>::zeros(3, 3);
        assert_eq!(matrix_exponential(&z, 7.0).unwrap(), DMatrix::identity(3, 3));

        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0, -1.0]));
        let e = matrix_exponential(&d, 1.0).unwrap();
        let expected = [2f64.exp(), 1f64.exp(), (-1f64).exp()];
        for i in 0..3 {
            assert!((e[(i, i)] - expected[i]).abs() <= 1e-12 * expected[i]);
        }

        let rot = mat(&[&[0.0, 1.0], &[-1.0, 0.0]]);
        let e = matrix_exponential(&rot, std::f64::consts::FRAC_PI_2).unwrap();
        assert!((e - rot).amax() < 1e-12);
    }

    #[test]
    fn exponential_overflow_is_range_error() {
        let d = DMatrix::from_element(1, 1, 1.0);
        assert!(matches!(matrix_exponential(&d, 1000.0), Err(Error::Range { .. })));
    }

    #[test]
    fn lifted_gram_blocks() {
        let g = mat(&[&[2.0, 0.5], &[0.5, 1.0]]);
        let lg = LiftedGram::from_gram(&g);
        assert_eq!(lg.matrix()[(2, 2)], 1.0);
        assert_eq!(lg.matrix()[(0, 2)], 0.0);
        assert_eq!(lg.matrix()[(2, 1)], 0.0);
        assert!(!lg.is_identity());
        assert!(LiftedGram::identity(3).is_identity());
    }
}
