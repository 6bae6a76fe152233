//! Coarse Galerkin problem on the span of a localized basis.
//!
//! The coarse matrix is `S_ij = φ_iᵀ A φ_j` without conjugation, assembled
//! element by element as `S_K = Φ_Kᵀ (A_K Φ_K)` where `Φ_K` holds the values
//! of every basis function whose support box contains `K` on the lattice
//! closure of `K`. For real symmetric forms this is the Galerkin matrix; for
//! the complex symmetric Helmholtz form it is the Petrov–Galerkin matrix with
//! conjugated test functions.

use faer::linalg::solvers::{Llt, PartialPivLu, Solve as _};
use faer::Mat;

use crate::basis::LodBasis;
use crate::constraints::Mode;
use crate::corrector::{assemble_basis, LodContext};
use crate::error::{invalid, Error, Result};
use crate::fem::{FeFunction, FineForm, NormOperators};
use crate::grid::{ElementBox, LatticeBox};
use crate::linalg::{Factorization, Scalar, SparseMatrix};
use crate::par::{self, Parallelism};

/// Largest coarse dimension solved with dense factorizations.
pub const DENSE_LIMIT: usize = 5000;

/// Pivot ratio below which a dense coarse matrix counts as singular.
const SINGULAR_RATIO: f64 = 1e-14;

#[derive(Clone, Debug, PartialEq)]
pub enum CoarseMatrix<S> {
    Dense(Vec<Vec<S>>),
    Sparse(SparseMatrix<S>),
}

impl<S: Scalar> CoarseMatrix<S> {
    pub fn dim(&self) -> usize {
        match self {
            Self::Dense(m) => m.len(),
            Self::Sparse(m) => m.nrows(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> S {
        match self {
            Self::Dense(m) => m[i][j],
            Self::Sparse(m) => m.get(i, j),
        }
    }

    pub fn mul_vec(&self, x: &[S]) -> Vec<S> {
        match self {
            Self::Dense(m) => m
                .iter()
                .map(|r| r.iter().zip(x).fold(S::zero(), |acc, (&a, &b)| acc + a * b))
                .collect(),
            Self::Sparse(m) => m.mul_vec(x),
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<S>> {
        match self {
            Self::Dense(m) => m.clone(),
            Self::Sparse(m) => m.to_dense(),
        }
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        match self {
            Self::Dense(m) => m.iter().flatten().fold(0.0, |acc, v| acc.max(v.modulus())),
            Self::Sparse(m) => m.max_abs(),
        }
    }

    /// `max |S_ij - S_ji|`.
    pub fn symmetry_defect(&self) -> f64 {
        let n = self.dim();
        let mut d: f64 = 0.0;
        for i in 0..n {
            for j in 0..i {
                d = d.max((self.get(i, j) - self.get(j, i)).modulus());
            }
        }
        d
    }

    /// Solves `S c = rhs`. `hermitian_pd` selects Cholesky.
    pub fn solve(&self, rhs: &[S], hermitian_pd: bool) -> Result<Vec<S>> {
        if rhs.len() != self.dim() {
            return Err(invalid(format!(
                "coarse load has length {}, expected {}",
                rhs.len(),
                self.dim()
            )));
        }
        if rhs.is_empty() {
            return Ok(Vec::new());
        }
        self.factor(hermitian_pd)?.solve(rhs)
    }

    /// Factorization reusable across right-hand sides. `hermitian_pd`
    /// selects Cholesky.
    pub fn factor(&self, hermitian_pd: bool) -> Result<CoarseFactor<S>> {
        match self {
            Self::Dense(m) => factor_dense(m, hermitian_pd),
            Self::Sparse(m) => {
                let factor = if hermitian_pd {
                    Factorization::cholesky(m)
                } else {
                    Factorization::lu(m)
                };
                factor.map(CoarseFactor::Sparse).map_err(|e| match e {
                    Error::NotPositiveDefinite { .. } | Error::Breakdown(_) => {
                        Error::SingularCoarse {
                            condition: sparse_condition_estimate(m),
                        }
                    }
                    other => other,
                })
            }
        }
    }
}

/// Factored coarse matrix.
pub enum CoarseFactor<S: Scalar> {
    DenseLlt(Llt<S>),
    DenseLu(PartialPivLu<S>),
    Sparse(Factorization<S>),
}

impl<S: Scalar> CoarseFactor<S> {
    pub fn solve(&self, rhs: &[S]) -> Result<Vec<S>> {
        let n = rhs.len();
        let out: Vec<S> = match self {
            Self::Sparse(f) => f.solve(rhs).map_err(|e| match e {
                Error::Breakdown(_) => Error::SingularCoarse {
                    condition: f64::INFINITY,
                },
                other => other,
            })?,
            Self::DenseLlt(f) => {
                let x = f.solve(Mat::from_fn(n, 1, |i, _| rhs[i]));
                (0..n).map(|i| x[(i, 0)]).collect()
            }
            Self::DenseLu(f) => {
                let x = f.solve(Mat::from_fn(n, 1, |i, _| rhs[i]));
                (0..n).map(|i| x[(i, 0)]).collect()
            }
        };
        if out.iter().any(|v| !v.modulus().is_finite()) {
            return Err(Error::SingularCoarse {
                condition: f64::INFINITY,
            });
        }
        Ok(out)
    }
}

fn factor_dense<S: Scalar>(m: &[Vec<S>], hermitian_pd: bool) -> Result<CoarseFactor<S>> {
    let n = m.len();
    let a = Mat::from_fn(n, n, |i, j| m[i][j]);
    if hermitian_pd {
        if let Ok(llt) = a.llt(faer::Side::Lower) {
            return Ok(CoarseFactor::DenseLlt(llt));
        }
    }
    let lu = a.partial_piv_lu();
    let u = lu.U();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..n {
        let d = u[(i, i)].modulus();
        lo = lo.min(d);
        hi = hi.max(d);
    }
    if !(lo > SINGULAR_RATIO * hi) {
        return Err(Error::SingularCoarse {
            condition: if lo > 0.0 { hi / lo } else { f64::INFINITY },
        });
    }
    if hermitian_pd {
        // Regular but indefinite.
        return Err(Error::NotPositiveDefinite { pivot: 0 });
    }
    Ok(CoarseFactor::DenseLu(lu))
}

/// Ratio of largest to smallest diagonal modulus; a cheap lower-bound proxy.
fn sparse_condition_estimate<S: Scalar>(m: &SparseMatrix<S>) -> f64 {
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..m.nrows() {
        let d = m.get(i, i).modulus();
        lo = lo.min(d);
        hi = hi.max(d);
    }
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

#[derive(Clone, Debug)]
pub struct CoarseSystem<S> {
    pub matrix: CoarseMatrix<S>,
    pub load: Vec<S>,
}

/// Basis indices whose element box contains each coarse element.
fn functions_per_element<S: Scalar>(basis: &LodBasis<S>) -> Vec<Vec<u32>> {
    let n = basis.lattice.n_coarse;
    let mut out = vec![Vec::new(); n * n];
    for (j, f) in basis.functions.iter().enumerate() {
        for k in f.elements.elements(n) {
            out[k].push(j as u32);
        }
    }
    out
}

/// Element contribution `Φ_Kᵀ A_K Φ_K` for the functions `list`.
fn element_block<S: Scalar>(
    basis: &LodBasis<S>,
    form: &FineForm<S>,
    k: usize,
    list: &[u32],
) -> Mat<S> {
    let lat = basis.lattice;
    let n = lat.n_coarse;
    let r = lat.ratio;
    let (kx, ky) = (k % n, k / n);
    let bx = lat.closure(&ElementBox::single(kx, ky));
    let a = form.assemble_block((kx * r, (kx + 1) * r, ky * r, (ky + 1) * r), &bx);
    let phi = gather(basis, &bx, list);
    let mut y = Mat::<S>::zeros(bx.len(), list.len());
    for c in 0..list.len() {
        let col = phi.col(c);
        for i in 0..bx.len() {
            let (cols, vals) = a.row(i);
            let mut acc = S::zero();
            for (&jj, &v) in cols.iter().zip(vals) {
                acc += v * col[jj as usize];
            }
            y[(i, c)] = acc;
        }
    }
    phi.transpose() * &y
}

/// Values of the listed functions on the lattice box `bx`, one column each.
fn gather<S: Scalar>(basis: &LodBasis<S>, bx: &LatticeBox, list: &[u32]) -> Mat<S> {
    Mat::from_fn(bx.len(), list.len(), |o, c| {
        let f = &basis.functions[list[c] as usize];
        let a = bx.a0 + o % bx.width();
        let b = bx.b0 + o / bx.width();
        f.values[f.support.offset(a, b)]
    })
}

/// Assembles the coarse matrix of `form` on the span of `basis`.
pub fn assemble_coarse_matrix<S: Scalar>(
    basis: &LodBasis<S>,
    form: &FineForm<S>,
    par: Parallelism,
) -> CoarseMatrix<S> {
    let jn = basis.len();
    let lists = functions_per_element(basis);
    let order: Vec<usize> = (0..lists.len()).collect();
    let chunk = 64;
    if jn <= DENSE_LIMIT {
        let mut s = vec![vec![S::zero(); jn]; jn];
        for batch in order.chunks(chunk) {
            let blocks = par::map(par, batch, |&k| element_block(basis, form, k, &lists[k]));
            for (&k, blk) in batch.iter().zip(blocks) {
                let list = &lists[k];
                for (a, &i) in list.iter().enumerate() {
                    let row = &mut s[i as usize];
                    for (b, &j) in list.iter().enumerate() {
                        row[j as usize] += blk[(a, b)];
                    }
                }
            }
        }
        return CoarseMatrix::Dense(s);
    }
    let n = basis.lattice.n_coarse;
    let rows: Vec<usize> = (0..jn).collect();
    let pattern = par::map(par, &rows, |&i| {
        let mut seen: Vec<u32> = Vec::new();
        for k in basis.functions[i].elements.elements(n) {
            seen.extend_from_slice(&lists[k]);
        }
        seen.sort_unstable();
        seen.dedup();
        seen
    });
    let mut s = SparseMatrix::<S>::from_pattern(jn, pattern);
    for batch in order.chunks(chunk) {
        let blocks = par::map(par, batch, |&k| element_block(basis, form, k, &lists[k]));
        for (&k, blk) in batch.iter().zip(blocks) {
            let list = &lists[k];
            let runs = runs_of(list);
            for (a, &i) in list.iter().enumerate() {
                let (cols, vals) = s.row_values_mut(i as usize);
                for &(start, len) in &runs {
                    let first = list[start];
                    let pos = cols
                        .binary_search(&first)
                        .expect("pattern covers every element block");
                    debug_assert_eq!(cols[pos + len - 1], first + len as u32 - 1);
                    for t in 0..len {
                        vals[pos + t] += blk[(a, start + t)];
                    }
                }
            }
        }
    }
    CoarseMatrix::Sparse(s)
}

/// Maximal runs of consecutive integers in a sorted list, as `(start, len)`.
fn runs_of(list: &[u32]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=list.len() {
        if i == list.len() || list[i] != list[i - 1] + 1 {
            out.push((start, i - start));
            start = i;
        }
    }
    out
}

/// Coarse matrix plus the load `(φ_iᵀ ℓ)_i` for a fine load vector `ℓ`.
pub fn assemble_coarse<S: Scalar>(
    basis: &LodBasis<S>,
    form: &FineForm<S>,
    fine_load: &[S],
    par: Parallelism,
) -> CoarseSystem<S> {
    CoarseSystem {
        matrix: assemble_coarse_matrix(basis, form, par),
        load: basis.project(fine_load, par),
    }
}

#[derive(Clone, Debug)]
pub struct LodSolution<S = f64> {
    pub coefficients: Vec<S>,
    pub fine: FeFunction<S>,
    pub coarse_h: f64,
    pub ell: usize,
    pub p: usize,
    pub mode: Mode,
}

/// Solves the coarse system and reconstructs `Σ_j c_j φ_j`.
pub fn solve<S: Scalar>(
    basis: &LodBasis<S>,
    system: &CoarseSystem<S>,
    hermitian_pd: bool,
    coarse_h: f64,
) -> Result<LodSolution<S>> {
    let c = system.matrix.solve(&system.load, hermitian_pd)?;
    let fine = FeFunction {
        values: basis.combine(&c),
    };
    Ok(LodSolution {
        coefficients: c,
        fine,
        coarse_h,
        ell: basis.ell,
        p: basis.p,
        mode: basis.mode,
    })
}

/// Relative energy and `L²` errors of `u` against `reference`.
pub fn errors(u: &[f64], reference: &[f64], ops: &NormOperators) -> Result<(f64, f64)> {
    if u.len() != reference.len() {
        return Err(invalid("solution and reference live on different spaces"));
    }
    let r = ops.norms(reference);
    if r.energy == 0.0 || r.l2 == 0.0 {
        return Err(invalid("reference solution has zero norm"));
    }
    let d: Vec<f64> = u.iter().zip(reference).map(|(a, b)| a - b).collect();
    let e = ops.norms(&d);
    Ok((e.energy / r.energy, e.l2 / r.l2))
}

/// Elliptic LOD: context, basis and coarse matrix for one `(H, ℓ, p, mode)`.
pub struct EllipticLod {
    pub ctx: LodContext<f64>,
    pub basis: LodBasis<f64>,
    pub matrix: CoarseMatrix<f64>,
}

impl EllipticLod {
    pub fn new(ctx: LodContext<f64>, ell: usize, par: Parallelism) -> Result<Self> {
        let basis = assemble_basis(&ctx, ell, par)?;
        let matrix = assemble_coarse_matrix(&basis, &ctx.form, par);
        Ok(Self { ctx, basis, matrix })
    }

    /// LOD solution for the fine load vector `fine_load`.
    pub fn solve(&self, fine_load: &[f64], par: Parallelism) -> Result<LodSolution<f64>> {
        let system = CoarseSystem {
            matrix: self.matrix.clone(),
            load: self.basis.project(fine_load, par),
        };
        solve(&self.basis, &system, true, self.ctx.space.mesh.h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::build_space;
    use crate::fem::{load_vector, solve_reference, BoundaryCondition, CoefficientField, FeSpace};
    use crate::grid::{build_mesh, refine, Domain, TraceCondition};

    fn lod(
        n: usize,
        r: usize,
        p: usize,
        mode: Mode,
        a: &CoefficientField,
        ell: usize,
    ) -> EllipticLod {
        let mesh = build_mesh(Domain::unit_square(), n).unwrap();
        let fe = FeSpace::new(
            refine(&mesh, r).unwrap(),
            1,
            BoundaryCondition::DirichletZero,
        )
        .unwrap();
        let form = FineForm::diffusion(&fe, a).unwrap();
        let space = build_space(&mesh, p, mode).unwrap();
        let ctx = LodContext::new(fe, space, form, TraceCondition::Vanishing).unwrap();
        EllipticLod::new(ctx, ell, Parallelism::Sequential).unwrap()
    }

    fn checker(m: usize) -> CoefficientField {
        CoefficientField::from_midpoints(Domain::unit_square(), m, |x, y| {
            if ((x * m as f64) as usize + (y * m as f64) as usize).is_multiple_of(2) {
                1.0
            } else {
                0.1
            }
        })
        .unwrap()
    }

    #[test]
    fn coarse_matrix_matches_explicit_triple_product() {
        let a = checker(8);
        let l = lod(4, 4, 1, Mode::Dg, &a, 1);
        let fine = l.ctx.matrix.clone();
        let s = l.matrix.to_dense();
        for i in (0..l.basis.len()).step_by(5) {
            let ai = fine.mul_vec(&l.basis.to_fine(i));
            for j in 0..l.basis.len() {
                let v: f64 = l.basis.to_fine(j).iter().zip(&ai).map(|(x, y)| x * y).sum();
                assert!((s[j][i] - v).abs() < 1e-11 * (1.0 + v.abs()), "({j},{i})");
            }
        }
        assert!(l.matrix.symmetry_defect() <= 1e-12 * l.matrix.max_abs());
    }

    #[test]
    fn sparse_path_equals_dense_path() {
        let a = checker(8);
        let l = lod(4, 4, 1, Mode::Cg, &a, 1);
        let jn = l.basis.len();
        let lists = functions_per_element(&l.basis);
        // Force the sparse branch through its building blocks.
        let pattern: Vec<Vec<u32>> = (0..jn)
            .map(|i| {
                let mut v: Vec<u32> = l.basis.functions[i]
                    .elements
                    .elements(4)
                    .flat_map(|k| lists[k].clone())
                    .collect();
                v.sort_unstable();
                v.dedup();
                v
            })
            .collect();
        let mut s = SparseMatrix::<f64>::from_pattern(jn, pattern);
        for (k, list) in lists.iter().enumerate() {
            let blk = element_block(&l.basis, &l.ctx.form, k, list);
            for (a, &i) in list.iter().enumerate() {
                let (cols, vals) = s.row_values_mut(i as usize);
                for (b, &j) in list.iter().enumerate() {
                    vals[cols.binary_search(&j).unwrap()] += blk[(a, b)];
                }
            }
        }
        let dense = l.matrix.to_dense();
        for i in 0..jn {
            for j in 0..jn {
                assert!((s.get(i, j) - dense[i][j]).abs() < 1e-13);
            }
        }
        assert_eq!(runs_of(&[1, 2, 3, 7, 9, 10]), vec![(0, 3), (3, 1), (4, 2)]);
    }

    #[test]
    fn zero_source_gives_zero_solution() {
        let l = lod(
            2,
            4,
            1,
            Mode::Dg,
            &CoefficientField::constant(Domain::unit_square(), 1.0),
            2,
        );
        let sol = l
            .solve(&vec![0.0; l.ctx.fe.ndofs()], Parallelism::Sequential)
            .unwrap();
        assert!(sol.coefficients.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn constant_source_is_reproduced_with_global_patches() {
        let a = checker(8);
        let l = lod(4, 8, 1, Mode::Dg, &a, 4);
        let fe = &l.ctx.fe;
        let load = load_vector(fe, |_, _| 1.0);
        let sol = l.solve(&load, Parallelism::Sequential).unwrap();
        let reference = solve_reference(fe, &a, |_, _| 1.0).unwrap();
        let ops = NormOperators::new(fe, &a).unwrap();
        let (e, _) = errors(&sol.fine.values, &reference.values, &ops).unwrap();
        assert!(e < 1e-9, "relative energy error {e}");
    }

    #[test]
    fn errors_scale_invariant() {
        let fe = FeSpace::new(
            refine(&build_mesh(Domain::unit_square(), 2).unwrap(), 4).unwrap(),
            1,
            BoundaryCondition::DirichletZero,
        )
        .unwrap();
        let a = CoefficientField::constant(Domain::unit_square(), 1.0);
        let ops = NormOperators::new(&fe, &a).unwrap();
        let r = fe.interpolate(|x, y| x * (1.0 - x) * y * (1.0 - y));
        let u = fe.interpolate(|x, y| x * (1.0 - x) * y * (1.0 - y) * (1.0 + 0.1 * x));
        let (e1, l1) = errors(&u, &r, &ops).unwrap();
        let s = |v: &[f64]| v.iter().map(|x| 3.0 * x).collect::<Vec<_>>();
        let (e2, l2) = errors(&s(&u), &s(&r), &ops).unwrap();
        assert!((e1 - e2).abs() < 1e-14 && (l1 - l2).abs() < 1e-14);
        assert_eq!(errors(&r, &r, &ops).unwrap(), (0.0, 0.0));
        assert!(errors(&r, &vec![0.0; r.len()], &ops).is_err());
    }
}
