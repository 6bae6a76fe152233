//! Heterogeneous Helmholtz problem with a Robin boundary condition.
//!
//! `a(u, v) = ∫ A∇u·∇v̄ − κ² ∫ V² u v̄ − iκ ∫_∂Ω σ u v̄` on `H¹(Ω; ℂ)`. Matrices
//! are assembled without conjugation, so the fine matrix is complex
//! symmetric. The LOD uses the same trial basis for the test space after
//! conjugation, which makes the coarse matrix `Φᵀ S Φ`.

use faer::{Mat, Par, Side};
use num_complex::Complex64;

use crate::constraints::{assemble_b, build_space, ConstraintSpace, Mode};
use crate::corrector::{assemble_basis, LodContext};
use crate::error::{invalid, Error, Result};
use crate::fem::{BoundaryCondition, CoefficientField, FeSpace, FineForm};
use crate::grid::{build_mesh, refine, TraceCondition};
use crate::linalg::{Factorization, SparseMatrix};
use crate::lodsolve::{assemble_coarse_matrix, solve, CoarseSystem, LodSolution};
use crate::par::Parallelism;
use crate::problems::Source;

/// Largest kernel dimension handled by [`coercivity_diagnostic`].
pub const MAX_KERNEL_DIM: usize = 4000;

#[derive(Clone, Debug)]
pub struct HelmholtzProblem {
    pub a: CoefficientField,
    /// Wave speed weight; the form uses `V²`.
    pub v: CoefficientField,
    pub sigma: f64,
    pub kappa: f64,
    pub source: Source,
}

impl HelmholtzProblem {
    pub fn new(
        a: CoefficientField,
        v: CoefficientField,
        sigma: f64,
        kappa: f64,
        source: Source,
    ) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(invalid(format!("wavenumber must be positive, got {kappa}")));
        }
        if !(sigma > 0.0) {
            return Err(invalid(format!(
                "boundary coefficient must be positive, got {sigma}"
            )));
        }
        let (lo, _) = v.bounds();
        if !(lo > 0.0) {
            return Err(invalid(format!(
                "V must be bounded away from zero, minimum is {lo}"
            )));
        }
        if a.domain != v.domain {
            return Err(invalid("A and V cover different domains"));
        }
        Ok(Self {
            a,
            v,
            sigma,
            kappa,
            source,
        })
    }

    fn v2(&self) -> CoefficientField {
        self.v.map(|x| x * x)
    }

    /// The complex form on `fe`.
    pub fn form(&self, fe: &FeSpace) -> Result<FineForm<Complex64>> {
        let k = self.kappa;
        FineForm::new(
            fe,
            Some(&self.a),
            Some((&self.v2(), Complex64::new(-k * k, 0.0))),
            Some(Complex64::new(0.0, -k * self.sigma)),
        )
    }
}

/// The assembled form together with its three real parts.
#[derive(Clone, Debug)]
pub struct SesquilinearSystem {
    pub matrix: SparseMatrix<Complex64>,
    /// `∫ A∇u·∇v`
    pub stiffness: SparseMatrix<f64>,
    /// `∫ V² u v`
    pub mass: SparseMatrix<f64>,
    /// `∫_∂Ω σ u v`
    pub boundary: SparseMatrix<f64>,
    pub kappa: f64,
}

pub fn assemble_helmholtz(fe: &FeSpace, prob: &HelmholtzProblem) -> Result<SesquilinearSystem> {
    if fe.boundary != BoundaryCondition::Natural {
        return Err(invalid(
            "the Helmholtz problem needs a space without essential conditions",
        ));
    }
    let par = Parallelism::default();
    let matrix = prob.form(fe)?.assemble(par);
    let stiffness = FineForm::<f64>::diffusion(fe, &prob.a)?.assemble(par);
    let mass = FineForm::<f64>::new(fe, None, Some((&prob.v2(), 1.0)), None)?.assemble(par);
    let boundary = FineForm::<f64>::new(fe, None, None, Some(prob.sigma))?.assemble(par);
    Ok(SesquilinearSystem {
        matrix,
        stiffness,
        mass,
        boundary,
        kappa: prob.kappa,
    })
}

impl SesquilinearSystem {
    /// `‖v‖_κ² = ‖A^{1/2}∇v‖² + κ²‖V v‖²`
    pub fn kappa_norm(&self, u: &[Complex64]) -> f64 {
        let q = |m: &SparseMatrix<f64>| -> f64 {
            let mc = m.map(Complex64::from);
            let conj: Vec<Complex64> = u.iter().map(|z| z.conj()).collect();
            mc.bilinear(&conj, u).re
        };
        (q(&self.stiffness) + self.kappa * self.kappa * q(&self.mass))
            .max(0.0)
            .sqrt()
    }

    /// Solves `S u = load` on the full lattice.
    pub fn solve(&self, load: &[Complex64]) -> Result<Vec<Complex64>> {
        Factorization::lu(&self.matrix)?.solve(load)
    }
}

/// `((f_I, φ_k))_k` as a complex vector.
pub fn load_vector(fe: &FeSpace, source: Source) -> Vec<Complex64> {
    crate::fem::load_vector(fe, |x, y| source.eval(x, y))
        .into_iter()
        .map(Complex64::from)
        .collect()
}

/// Discretization parameters of one Helmholtz LOD run on the unit square.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HelmholtzParams {
    pub n_coarse: usize,
    pub ratio: usize,
    pub q: usize,
    pub p: usize,
    pub mode: Mode,
    pub ell: usize,
}

#[derive(Clone, Debug)]
pub struct HelmholtzResult {
    pub solution: LodSolution<Complex64>,
    pub reference: Vec<Complex64>,
    pub err_kappa_rel: f64,
    pub coarse_dofs: usize,
    pub fine_dofs: usize,
}

/// Runs the LOD and the fine reference and compares them in the `κ`-norm.
pub fn solve_helmholtz_lod(
    prob: &HelmholtzProblem,
    params: HelmholtzParams,
    par: Parallelism,
) -> Result<HelmholtzResult> {
    let mesh = build_mesh(prob.a.domain, params.n_coarse)?;
    let fe = FeSpace::new(
        refine(&mesh, params.ratio)?,
        params.q,
        BoundaryCondition::Natural,
    )?;
    let sys = assemble_helmholtz(&fe, prob)?;
    let load = load_vector(&fe, prob.source);
    let reference = sys.solve(&load)?;
    let space = build_space(&mesh, params.p, params.mode)?;
    let form = prob.form(&fe)?;
    let fine_dofs = fe.ndofs();
    let ctx = LodContext::new(fe, space, form, TraceCondition::InteriorOnly)?;
    let basis = assemble_basis(&ctx, params.ell, par)?;
    let system = CoarseSystem {
        matrix: assemble_coarse_matrix(&basis, &ctx.form, par),
        load: basis.project(&load, par),
    };
    let solution = solve(&basis, &system, false, mesh.h)?;
    let diff: Vec<Complex64> = solution
        .fine
        .values
        .iter()
        .zip(&reference)
        .map(|(a, b)| a - b)
        .collect();
    let norm = sys.kappa_norm(&reference);
    if norm == 0.0 {
        return Err(invalid(
            "reference solution vanishes; relative error undefined",
        ));
    }
    Ok(HelmholtzResult {
        err_kappa_rel: sys.kappa_norm(&diff) / norm,
        coarse_dofs: basis.len(),
        fine_dofs,
        solution,
        reference,
    })
}

/// `min_{w ∈ W} ℜ a(w, w) / ‖∇w‖²` over the discrete kernel `W` of the
/// quantities of interest.
///
/// Builds a dense orthonormal kernel basis, so the instance must be small.
pub fn coercivity_diagnostic(
    fe: &FeSpace,
    prob: &HelmholtzProblem,
    space: &ConstraintSpace,
) -> Result<f64> {
    let b = assemble_b(space, fe)?;
    let n = fe.ndofs();
    let jn = b.nrows();
    if n <= jn {
        return Err(invalid(
            "fine space is not larger than the constraint space",
        ));
    }
    if n - jn > MAX_KERNEL_DIM {
        return Err(Error::TooLarge(format!(
            "kernel dimension {} exceeds {MAX_KERNEL_DIM}",
            n - jn
        )));
    }
    let sys = assemble_helmholtz(fe, prob)?;
    let one = CoefficientField::constant(fe.domain(), 1.0);
    let laplace = FineForm::<f64>::diffusion(fe, &one)?.assemble(Parallelism::default());
    let bd = Mat::from_fn(n, n, |i, j| if i < jn { b.get(i, j) } else { 0.0 });
    let svd = bd
        .svd()
        .map_err(|e| Error::Breakdown(format!("SVD of the constraint matrix failed: {e:?}")))?;
    let sv = svd.S().column_vector();
    let smax = sv[0];
    let rank = (0..jn).filter(|&i| sv[i] > 1e-10 * smax).count();
    if rank < jn {
        return Err(Error::ConstraintRank {
            deficient: jn - rank,
            rows: jn,
        });
    }
    let z = svd.V().subcols(jn, n - jn).to_owned();
    let k2 = sys.kappa * sys.kappa;
    let re_s = Mat::from_fn(n, n, |_, _| 0.0);
    let mut re_s = re_s;
    for i in 0..n {
        let (cols, vals) = sys.stiffness.row(i);
        for (&c, &v) in cols.iter().zip(vals) {
            re_s[(i, c as usize)] += v;
        }
        let (cols, vals) = sys.mass.row(i);
        for (&c, &v) in cols.iter().zip(vals) {
            re_s[(i, c as usize)] -= k2 * v;
        }
    }
    let lap = Mat::from_fn(n, n, |i, j| laplace.get(i, j));
    let g = z.transpose() * &re_s * &z;
    let k = z.transpose() * &lap * &z;
    let llt = k
        .llt(Side::Lower)
        .map_err(|_| Error::NotPositiveDefinite { pivot: 0 })?;
    let l = llt.L();
    // C = L⁻¹ G L⁻ᵀ
    let mut x = g.clone();
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(l, x.as_mut(), Par::Seq);
    let mut c = x.transpose().to_owned();
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(l, c.as_mut(), Par::Seq);
    let eig = c
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Breakdown(format!("eigenvalue solver failed: {e:?}")))?;
    Ok(eig[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Domain;

    fn problem(kappa: f64) -> HelmholtzProblem {
        let one = CoefficientField::constant(Domain::unit_square(), 1.0);
        HelmholtzProblem::new(one.clone(), one, 1.0, kappa, Source::F1).unwrap()
    }

    fn space(n: usize, r: usize, q: usize) -> FeSpace {
        FeSpace::new(
            refine(&build_mesh(Domain::unit_square(), n).unwrap(), r).unwrap(),
            q,
            BoundaryCondition::Natural,
        )
        .unwrap()
    }

    #[test]
    fn constant_function_integrals() {
        let fe = space(2, 2, 2);
        let kappa = 3.0;
        let sys = assemble_helmholtz(&fe, &problem(kappa)).unwrap();
        let one = vec![Complex64::from(1.0); fe.ndofs()];
        let a11 = sys.matrix.bilinear(&one, &one);
        assert!((a11.re + kappa * kappa).abs() < 1e-12);
        assert!((a11.im + kappa * 4.0).abs() < 1e-12);
        assert!(sys.matrix.symmetry_defect() <= 1e-12);
    }

    #[test]
    fn split_into_real_parts() {
        let fe = space(2, 2, 1);
        let kappa = 2.5;
        let sys = assemble_helmholtz(&fe, &problem(kappa)).unwrap();
        let combined = sys
            .stiffness
            .map(Complex64::from)
            .add_scaled(
                &sys.mass.map(Complex64::from),
                Complex64::from(-kappa * kappa),
            )
            .add_scaled(
                &sys.boundary.map(Complex64::from),
                Complex64::new(0.0, -kappa),
            );
        let d = combined.add_scaled(&sys.matrix, Complex64::from(-1.0));
        assert!(d.max_abs() < 1e-12);
    }

    #[test]
    fn coercivity_without_wavenumber_equals_alpha() {
        let fe = space(2, 4, 1);
        let mesh = build_mesh(Domain::unit_square(), 2).unwrap();
        let sp = build_space(&mesh, 1, Mode::Dg).unwrap();
        let v = coercivity_diagnostic(&fe, &problem(1e-8), &sp).unwrap();
        assert!((v - 1.0).abs() < 1e-6, "{v}");
    }

    #[test]
    fn zero_source_gives_zero_solution() {
        let one = CoefficientField::constant(Domain::unit_square(), 1.0);
        let mut prob = HelmholtzProblem::new(one.clone(), one, 1.0, 2.0, Source::F3).unwrap();
        prob.source = Source::F3;
        let fe = space(2, 4, 1);
        let sys = assemble_helmholtz(&fe, &prob).unwrap();
        let u = sys.solve(&vec![Complex64::from(0.0); fe.ndofs()]).unwrap();
        assert!(u.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn small_wavenumber_matches_reference() {
        let prob = problem(1.0);
        let params = HelmholtzParams {
            n_coarse: 8,
            ratio: 8,
            q: 1,
            p: 1,
            mode: Mode::Dg,
            ell: 3,
        };
        let r = solve_helmholtz_lod(&prob, params, Parallelism::default()).unwrap();
        assert!(r.err_kappa_rel <= 1e-2, "{}", r.err_kappa_rel);
    }
}
