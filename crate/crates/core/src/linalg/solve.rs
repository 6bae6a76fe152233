use faer::linalg::solvers::Solve as _;
use faer::sparse::linalg::solvers::{Llt, Lu};
use faer::{Mat, Side};

use super::scalar::{norm2, Scalar};
use super::sparse::{assemble, SparseMatrix};
use crate::error::{invalid, Error, Result};

/// Relative pivot size below which a constraint row counts as dependent.
const RANK_TOLERANCE: f64 = 1e-10;

/// Reusable direct factorization of a sparse matrix.
pub enum Factorization<S: Scalar> {
    Cholesky { n: usize, llt: Llt<usize, S> },
    Lu { n: usize, lu: Lu<usize, S> },
}

impl<S: Scalar> Factorization<S> {
    /// Cholesky factorization of a Hermitian positive definite matrix. Only
    /// the lower triangle is read.
    pub fn cholesky(m: &SparseMatrix<S>) -> Result<Self> {
        check_square(m)?;
        let llt = m.to_faer().sp_cholesky(Side::Lower).map_err(|e| match e {
            faer::sparse::linalg::LltError::Numeric(
                faer::linalg::cholesky::llt::factor::LltError::NonPositivePivot { index },
            ) => Error::NotPositiveDefinite { pivot: index },
            other => Error::Breakdown(format!("sparse Cholesky failed: {other}")),
        })?;
        Ok(Self::Cholesky { n: m.nrows(), llt })
    }

    /// LU factorization with partial pivoting.
    pub fn lu(m: &SparseMatrix<S>) -> Result<Self> {
        check_square(m)?;
        let lu = m
            .to_faer()
            .sp_lu()
            .map_err(|e| Error::Breakdown(format!("sparse LU failed: {e}")))?;
        Ok(Self::Lu { n: m.nrows(), lu })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Cholesky { n, .. } | Self::Lu { n, .. } => *n,
        }
    }

    pub fn solve(&self, rhs: &[S]) -> Result<Vec<S>> {
        let mut cols = Mat::from_fn(rhs.len(), 1, |i, _| rhs[i]);
        self.solve_in_place(&mut cols)?;
        Ok((0..rhs.len()).map(|i| cols[(i, 0)]).collect())
    }

    /// Solves for every column of `rhs` in place.
    pub fn solve_in_place(&self, rhs: &mut Mat<S>) -> Result<()> {
        if rhs.nrows() != self.dim() {
            return Err(invalid(format!(
                "right-hand side has {} rows, expected {}",
                rhs.nrows(),
                self.dim()
            )));
        }
        match self {
            Self::Cholesky { llt, .. } => llt.solve_in_place(rhs.as_mut()),
            Self::Lu { lu, .. } => lu.solve_in_place(rhs.as_mut()),
        }
        for j in 0..rhs.ncols() {
            for i in 0..rhs.nrows() {
                let v: S = rhs[(i, j)];
                if !v.modulus().is_finite() {
                    return Err(Error::Breakdown(format!(
                        "non-finite solution component {i}"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn check_square<S: Scalar>(m: &SparseMatrix<S>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(invalid(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// Solves `M x = rhs` for symmetric (Hermitian) positive definite `M`.
pub fn solve_spd<S: Scalar>(m: &SparseMatrix<S>, rhs: &[S]) -> Result<Vec<S>> {
    Factorization::cholesky(m)?.solve(rhs)
}

/// Dense LU solve of a small system given by rows.
pub fn solve_dense<S: Scalar>(a: &[Vec<S>], rhs: &[S]) -> Result<Vec<S>> {
    let n = a.len();
    if rhs.len() != n || a.iter().any(|r| r.len() != n) {
        return Err(invalid(
            "dense system must be square and match the right-hand side",
        ));
    }
    let m = Mat::from_fn(n, n, |i, j| a[i][j]);
    let b = Mat::from_fn(n, 1, |i, _| rhs[i]);
    let x = m.partial_piv_lu().solve(&b);
    let out: Vec<S> = (0..n).map(|i| x[(i, 0)]).collect();
    if out.iter().any(|v| !v.modulus().is_finite()) {
        return Err(Error::Breakdown("singular dense system".into()));
    }
    Ok(out)
}

/// Saddle point system `[[A, Bᵀ], [B, 0]] [x; λ] = [f; g]`.
///
/// `B` is real; the constraint functionals of every problem in this crate
/// are real even when `A` is complex.
pub struct KktSystem<'a, S: Scalar> {
    pub a: &'a SparseMatrix<S>,
    pub b: &'a SparseMatrix<f64>,
    pub f: &'a [S],
    pub g: &'a [S],
}

/// Solves a single saddle point system.
pub fn solve_kkt<S: Scalar>(sys: &KktSystem<'_, S>) -> Result<(Vec<S>, Vec<S>)> {
    KktFactorization::new(sys.a, sys.b)?.solve(sys.f, sys.g)
}

/// How the multipliers of a saddle point system are eliminated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elimination {
    /// Sparse LU of the bordered matrix.
    Bordered,
    /// Sparse Cholesky of `A` and a dense Cholesky of `B A⁻¹ Bᵀ`. Needs a
    /// Hermitian positive definite `A`.
    Schur,
}

/// Average constraint row length from which real systems use [`Elimination::Schur`].
/// Long rows turn into dense cliques in the bordered factorization.
pub const SCHUR_ROW_LENGTH: usize = 400;

/// Columns of `Bᵀ` solved at once while forming the Schur complement.
const SCHUR_CHUNK: usize = 64;

enum KktInner<S: Scalar> {
    Bordered(Factorization<S>),
    Schur {
        a: Factorization<S>,
        /// Row-scaled `B`.
        b: SparseMatrix<S>,
        schur: faer::linalg::solvers::Llt<S>,
    },
}

/// Factorized saddle point system with row-equilibrated constraints.
///
/// Invariant: `row_scale[k] · B[k, :]` has unit Euclidean norm for every
/// non-zero row, and the Gram matrix of the scaled rows passed the rank test.
pub struct KktFactorization<S: Scalar> {
    n: usize,
    m: usize,
    row_scale: Vec<f64>,
    inner: KktInner<S>,
}

impl<S: Scalar> KktFactorization<S> {
    /// Picks the elimination from the row lengths of `B`: Schur for real
    /// systems with long rows (falling back to bordered when `A` is not
    /// positive definite), bordered otherwise.
    pub fn new(a: &SparseMatrix<S>, b: &SparseMatrix<f64>) -> Result<Self> {
        let long_rows = b.nrows() > 0 && b.nnz() >= SCHUR_ROW_LENGTH * b.nrows();
        if !S::IS_COMPLEX && long_rows {
            match Self::with_elimination(a, b, Elimination::Schur) {
                Err(Error::NotPositiveDefinite { .. }) => {}
                other => return other,
            }
        }
        Self::with_elimination(a, b, Elimination::Bordered)
    }

    pub fn with_elimination(
        a: &SparseMatrix<S>,
        b: &SparseMatrix<f64>,
        how: Elimination,
    ) -> Result<Self> {
        let (n, m) = (a.nrows(), b.nrows());
        if a.ncols() != n || b.ncols() != n {
            return Err(invalid(format!(
                "inconsistent saddle point blocks: A is {}x{}, B is {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols()
            )));
        }
        let row_scale: Vec<f64> = (0..m)
            .map(|k| {
                let nrm = norm2(b.row(k).1);
                if nrm > 0.0 {
                    1.0 / nrm
                } else {
                    1.0
                }
            })
            .collect();
        let deficient = gram_deficiency(b, &row_scale);
        if deficient > 0 {
            return Err(Error::ConstraintRank { deficient, rows: m });
        }
        let inner = match how {
            Elimination::Bordered => {
                let mut trip: Vec<(usize, usize, S)> = Vec::with_capacity(a.nnz() + 2 * b.nnz());
                trip.extend(a.triplets());
                for (k, j, v) in b.triplets() {
                    let s = S::from_f64(v * row_scale[k]);
                    trip.push((n + k, j, s));
                    trip.push((j, n + k, s));
                }
                let bordered = assemble(n + m, n + m, &trip)?;
                KktInner::Bordered(Factorization::lu(&bordered)?)
            }
            Elimination::Schur => {
                let af = Factorization::cholesky(a)?;
                let trip: Vec<(usize, usize, S)> = b
                    .triplets()
                    .map(|(k, j, v)| (k, j, S::from_f64(v * row_scale[k])))
                    .collect();
                let bs = assemble(m, n, &trip)?;
                let bt = bs.transpose();
                let mut schur = Mat::<S>::zeros(m, m);
                for c0 in (0..m).step_by(SCHUR_CHUNK) {
                    let w = SCHUR_CHUNK.min(m - c0);
                    let mut z = Mat::<S>::zeros(n, w);
                    for i in 0..n {
                        let (cols, vals) = bt.row(i);
                        for (&k, &v) in cols.iter().zip(vals) {
                            let k = k as usize;
                            if (c0..c0 + w).contains(&k) {
                                z[(i, k - c0)] = v;
                            }
                        }
                    }
                    af.solve_in_place(&mut z)?;
                    for k in 0..m {
                        let (cols, vals) = bs.row(k);
                        for c in 0..w {
                            let mut acc = S::zero();
                            for (&j, &v) in cols.iter().zip(vals) {
                                acc += v * z[(j as usize, c)];
                            }
                            schur[(k, c0 + c)] = acc;
                        }
                    }
                }
                let schur = schur.llt(Side::Lower).map_err(|_| Error::ConstraintRank {
                    deficient: 1,
                    rows: m,
                })?;
                KktInner::Schur {
                    a: af,
                    b: bs,
                    schur,
                }
            }
        };
        Ok(Self {
            n,
            m,
            row_scale,
            inner,
        })
    }

    pub fn elimination(&self) -> Elimination {
        match self.inner {
            KktInner::Bordered(_) => Elimination::Bordered,
            KktInner::Schur { .. } => Elimination::Schur,
        }
    }

    pub fn primal_dim(&self) -> usize {
        self.n
    }

    pub fn constraint_count(&self) -> usize {
        self.m
    }

    pub fn solve(&self, f: &[S], g: &[S]) -> Result<(Vec<S>, Vec<S>)> {
        let mut out = self.solve_many(&[f], &[g])?;
        Ok(out.pop().expect("one right-hand side"))
    }

    /// Solves for several right-hand side pairs with one pass over the factors.
    pub fn solve_many(&self, fs: &[&[S]], gs: &[&[S]]) -> Result<Vec<(Vec<S>, Vec<S>)>> {
        if fs.len() != gs.len() {
            return Err(invalid(
                "primal and constraint right-hand side counts differ",
            ));
        }
        let (n, m) = (self.n, self.m);
        if let Some(bad) = fs
            .iter()
            .position(|f| f.len() != n)
            .or_else(|| gs.iter().position(|g| g.len() != m))
        {
            return Err(invalid(format!(
                "right-hand side {bad} has the wrong length"
            )));
        }
        let nc = fs.len();
        // Solutions in scaled multipliers.
        let (x, lam) = match &self.inner {
            KktInner::Bordered(factor) => {
                let mut rhs = Mat::from_fn(n + m, nc, |i, c| {
                    if i < n {
                        fs[c][i]
                    } else {
                        gs[c][i - n].scale(self.row_scale[i - n])
                    }
                });
                factor.solve_in_place(&mut rhs)?;
                (
                    Mat::from_fn(n, nc, |i, c| rhs[(i, c)]),
                    Mat::from_fn(m, nc, |k, c| rhs[(n + k, c)]),
                )
            }
            KktInner::Schur { a, b, schur } => {
                // y = A⁻¹f, S λ = B y − g, x = y − A⁻¹Bᵀλ.
                let mut y = Mat::from_fn(n, nc, |i, c| fs[c][i]);
                a.solve_in_place(&mut y)?;
                let mut lam = Mat::from_fn(m, nc, |k, c| -gs[c][k].scale(self.row_scale[k]));
                for k in 0..m {
                    let (cols, vals) = b.row(k);
                    for c in 0..nc {
                        let mut acc = S::zero();
                        for (&j, &v) in cols.iter().zip(vals) {
                            acc += v * y[(j as usize, c)];
                        }
                        lam[(k, c)] += acc;
                    }
                }
                schur.solve_in_place(lam.as_mut());
                let mut r = Mat::<S>::zeros(n, nc);
                for k in 0..m {
                    let (cols, vals) = b.row(k);
                    for c in 0..nc {
                        let l = lam[(k, c)];
                        for (&j, &v) in cols.iter().zip(vals) {
                            r[(j as usize, c)] += v * l;
                        }
                    }
                }
                a.solve_in_place(&mut r)?;
                (Mat::from_fn(n, nc, |i, c| y[(i, c)] - r[(i, c)]), lam)
            }
        };
        Ok((0..nc)
            .map(|c| {
                let xs = (0..n).map(|i| x[(i, c)]).collect();
                let ls = (0..m)
                    .map(|k| lam[(k, c)].scale(self.row_scale[k]))
                    .collect();
                (xs, ls)
            })
            .collect())
    }
}

/// Number of numerically dependent rows of `b`, judged by the pivots of the
/// Cholesky factorization of the row-normalized Gram matrix `B̃ B̃ᵀ`.
pub fn constraint_rank_deficiency(b: &SparseMatrix<f64>) -> usize {
    let scale: Vec<f64> = (0..b.nrows())
        .map(|k| {
            let nrm = norm2(b.row(k).1);
            if nrm > 0.0 {
                1.0 / nrm
            } else {
                1.0
            }
        })
        .collect();
    gram_deficiency(b, &scale)
}

/// Profile (skyline) Cholesky of the Gram matrix in natural row order.
/// Rows whose pivot falls below the tolerance are counted and dropped.
fn gram_deficiency(b: &SparseMatrix<f64>, scale: &[f64]) -> usize {
    let m = b.nrows();
    if m == 0 {
        return 0;
    }
    let bt = b.transpose();
    // First column of each profile row.
    let mut first: Vec<usize> = (0..m).collect();
    for i in 0..bt.nrows() {
        let (rows, _) = bt.row(i);
        if let Some(&lo) = rows.first() {
            for &k in rows {
                let k = k as usize;
                first[k] = first[k].min(lo as usize);
            }
        }
    }
    let mut start = vec![0usize; m + 1];
    for k in 0..m {
        start[k + 1] = start[k] + (k - first[k] + 1);
    }
    let mut g = vec![0.0f64; start[m]];
    let at = |k: usize, l: usize| start[k] + (l - first[k]);
    for i in 0..bt.nrows() {
        let (rows, vals) = bt.row(i);
        for (p, (&k, &vk)) in rows.iter().zip(vals).enumerate() {
            let k = k as usize;
            let sk = vk * scale[k];
            for (&l, &vl) in rows[..=p].iter().zip(&vals[..=p]) {
                let l = l as usize;
                g[at(k, l)] += sk * vl * scale[l];
            }
        }
    }

    let mut deficient = 0;
    let mut max_pivot = 0.0f64;
    for k in 0..m {
        for j in first[k]..k {
            let lo = first[k].max(first[j]);
            let mut s = g[at(k, j)];
            for t in lo..j {
                s -= g[at(k, t)] * g[at(j, t)];
            }
            let djj = g[at(j, j)];
            g[at(k, j)] = if djj > 0.0 { s / djj } else { 0.0 };
        }
        let mut d = g[at(k, k)];
        for t in first[k]..k {
            d -= g[at(k, t)] * g[at(k, t)];
        }
        let diag = g[at(k, k)];
        max_pivot = max_pivot.max(d).max(diag.min(1.0));
        if d <= RANK_TOLERANCE * max_pivot || d <= 0.0 {
            deficient += 1;
            for t in first[k]..k {
                g[at(k, t)] = 0.0;
            }
            g[at(k, k)] = 0.0;
        } else {
            g[at(k, k)] = d.sqrt();
        }
    }
    deficient
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn laplace_1d(n: usize) -> SparseMatrix<f64> {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        assemble(n, n, &t).unwrap()
    }

    #[test]
    fn spd_identity_and_diagonal() {
        let x = solve_spd(&SparseMatrix::<f64>::identity(3), &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(x, vec![1.0, 0.0, 0.0]);
        let d = SparseMatrix::from_diagonal(&[2.0, 4.0]);
        let x = solve_spd(&d, &[2.0, 4.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn spd_rejects_indefinite() {
        let m = SparseMatrix::from_diagonal(&[1.0, -1.0]);
        assert!(matches!(
            solve_spd(&m, &[1.0, 1.0]),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn spd_parabola() {
        // -u'' = 1 on (0,1), h = 1/4, P1: scaled stiffness (1/h) tridiag, load h.
        let h = 0.25;
        let k = laplace_1d(3).scaled(1.0 / h);
        let x = solve_spd(&k, &[h, h, h]).unwrap();
        for (i, xi) in x.iter().enumerate() {
            let t = (i + 1) as f64 * h;
            assert!((xi - 0.5 * t * (1.0 - t)).abs() < 1e-14);
        }
    }

    #[test]
    fn kkt_small_example() {
        let a = SparseMatrix::<f64>::identity(2);
        let b = assemble(1, 2, &[(0, 0, 1.0)]).unwrap();
        let (x, lam) = solve_kkt(&KktSystem {
            a: &a,
            b: &b,
            f: &[0.0, 0.0],
            g: &[1.0],
        })
        .unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14 && x[1].abs() < 1e-14);
        assert!((lam[0] + 1.0).abs() < 1e-14);
    }

    #[test]
    fn kkt_without_constraints_is_plain_solve() {
        let a = laplace_1d(4);
        let b = SparseMatrix::<f64>::zeros(0, 4);
        let f = [1.0, 2.0, 3.0, 4.0];
        let (x, lam) = solve_kkt(&KktSystem {
            a: &a,
            b: &b,
            f: &f,
            g: &[],
        })
        .unwrap();
        assert!(lam.is_empty());
        let y = solve_spd(&a, &f).unwrap();
        for (u, v) in x.iter().zip(&y) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn kkt_detects_dependent_rows() {
        let a = SparseMatrix::<f64>::identity(3);
        let b = assemble(2, 3, &[(0, 0, 1.0), (0, 1, 1.0), (1, 0, 2.0), (1, 1, 2.0)]).unwrap();
        match KktFactorization::new(&a, &b) {
            Err(Error::ConstraintRank { deficient, rows }) => assert_eq!((deficient, rows), (1, 2)),
            other => panic!("expected a rank error, got {:?}", other.err()),
        }
        let too_many =
            assemble(3, 2, &[(0, 0, 1.0), (1, 1, 1.0), (2, 0, 1.0), (2, 1, 1.0)]).unwrap();
        assert_eq!(constraint_rank_deficiency(&too_many), 1);
    }

    #[test]
    fn kkt_complex_residual_and_reuse() {
        let n = 6;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, Complex64::new(3.0, -0.5)));
            if i + 1 < n {
                t.push((i, i + 1, Complex64::new(-1.0, 0.2)));
                t.push((i + 1, i, Complex64::new(-1.0, 0.2)));
            }
        }
        let a = assemble(n, n, &t).unwrap();
        let b = assemble(2, n, &[(0, 0, 1.0), (0, 1, 1.0), (1, 4, 0.5), (1, 5, 1.0)]).unwrap();
        let fact = KktFactorization::new(&a, &b).unwrap();
        let f1: Vec<Complex64> = (0..n).map(|i| Complex64::new(i as f64, 1.0)).collect();
        let f2: Vec<Complex64> = (0..n).map(|i| Complex64::new(1.0, -(i as f64))).collect();
        let g1 = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 2.0)];
        let g2 = [Complex64::new(-1.0, 0.5), Complex64::new(0.0, 0.0)];
        let both = fact.solve_many(&[&f1, &f2], &[&g1, &g2]).unwrap();
        for ((x, lam), (f, g)) in both.iter().zip([(&f1, &g1[..]), (&f2, &g2[..])]) {
            let mut r = a.mul_vec(x);
            let bc = b.map(Complex64::from);
            let bt = bc.mul_transpose_vec(lam);
            for i in 0..n {
                r[i] += bt[i] - f[i];
            }
            assert!(norm2(&r) <= 1e-12 * norm2(f));
            let c = bc.mul_vec(x);
            for k in 0..2 {
                assert!((c[k] - g[k]).norm() < 1e-12);
            }
        }
        let single = fact.solve(&f2, &g2).unwrap();
        for (u, v) in single.0.iter().zip(&both[1].0) {
            assert!((u - v).norm() <= 1e-12);
        }
    }

    #[test]
    fn schur_and_bordered_elimination_agree() {
        let n = 40;
        let a = laplace_1d(n);
        let mut t = Vec::new();
        for k in 0..5 {
            for j in 8 * k..8 * k + 8 {
                t.push((k, j, 1.0 + (j % 3) as f64));
            }
        }
        let b = assemble(5, n, &t).unwrap();
        let bordered = KktFactorization::with_elimination(&a, &b, Elimination::Bordered).unwrap();
        let schur = KktFactorization::with_elimination(&a, &b, Elimination::Schur).unwrap();
        assert_eq!(schur.elimination(), Elimination::Schur);
        let f: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
        let g = [1.0, -2.0, 0.5, 0.0, 3.0];
        let (x1, l1) = bordered.solve(&f, &g).unwrap();
        let (x2, l2) = schur.solve(&f, &g).unwrap();
        for (u, v) in x1.iter().zip(&x2).chain(l1.iter().zip(&l2)) {
            assert!((u - v).abs() <= 1e-10 * (1.0 + u.abs()), "{u} vs {v}");
        }
        let indefinite = SparseMatrix::from_diagonal(&vec![-1.0; n]);
        assert!(matches!(
            KktFactorization::with_elimination(&indefinite, &b, Elimination::Schur),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }
}
