//! Fine-scale `Q^q` Lagrange finite elements on a refined Cartesian mesh.
//!
//! Degrees of freedom are the lattice points of [`Lattice`]; the local
//! numbering inside a fine element is `β (q + 1) + α` for the point at lattice
//! offset `(α, β)` from the element's lower-left corner.

use crate::error::{invalid, Error, Result};
use crate::grid::{Domain, Lattice, Refinement};
use crate::linalg::{assemble, Factorization, Scalar, SparseMatrix};
use crate::par::{self, Parallelism};
use crate::quadrature::reference_matrices_1d;

/// Piecewise constant field on an `m × m` grid over the domain.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientField {
    pub domain: Domain,
    pub m: usize,
    /// Row-major cell values, `values[j * m + i]` for cell `(i, j)`.
    pub values: Vec<f64>,
}

impl CoefficientField {
    pub fn new(domain: Domain, m: usize, values: Vec<f64>) -> Result<Self> {
        if m == 0 || values.len() != m * m {
            return Err(invalid(format!(
                "coefficient grid needs {m}x{m} values, got {}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(invalid(format!("coefficient value {v} is not finite")));
        }
        Ok(Self { domain, m, values })
    }

    pub fn constant(domain: Domain, c: f64) -> Self {
        Self {
            domain,
            m: 1,
            values: vec![c],
        }
    }

    /// Samples `f` at the cell midpoints of an `m × m` grid.
    pub fn from_midpoints(domain: Domain, m: usize, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let h = domain.side / m as f64;
        let values = (0..m * m)
            .map(|k| {
                let (i, j) = (k % m, k / m);
                f(
                    domain.origin[0] + (i as f64 + 0.5) * h,
                    domain.origin[1] + (j as f64 + 0.5) * h,
                )
            })
            .collect();
        Self::new(domain, m, values)
    }

    #[inline]
    pub fn cell(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.m + i]
    }

    /// `(min, max)` over all cells.
    pub fn bounds(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            domain: self.domain,
            m: self.m,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Value on every element of an `n_fine × n_fine` mesh of the same domain.
    pub fn on_fine_mesh(&self, n_fine: usize) -> Result<Vec<f64>> {
        if !n_fine.is_multiple_of(self.m) {
            return Err(Error::Alignment { m: self.m, n_fine });
        }
        let k = n_fine / self.m;
        Ok((0..n_fine * n_fine)
            .map(|e| self.cell((e % n_fine) / k, (e / n_fine) / k))
            .collect())
    }
}

/// Essential boundary treatment of a fine space.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryCondition {
    /// `H¹₀(Ω)`: boundary lattice points are eliminated.
    DirichletZero,
    /// `H¹(Ω)`: every lattice point is free.
    Natural,
}

/// Continuous `Q^q` space on the fine mesh of a refinement.
#[derive(Clone, Debug)]
pub struct FeSpace {
    pub refinement: Refinement,
    pub q: usize,
    pub lattice: Lattice,
    pub boundary: BoundaryCondition,
    free: Vec<usize>,
    free_pos: Vec<u32>,
}

impl FeSpace {
    pub fn new(refinement: Refinement, q: usize, boundary: BoundaryCondition) -> Result<Self> {
        if q == 0 {
            return Err(invalid("finite element degree must be positive"));
        }
        let lattice = refinement.lattice(q);
        if lattice.len() > u32::MAX as usize {
            return Err(invalid("fine space too large for 32-bit indices"));
        }
        let side = lattice.side();
        let free: Vec<usize> = (0..lattice.len())
            .filter(|&k| {
                boundary == BoundaryCondition::Natural || !lattice.is_boundary(k % side, k / side)
            })
            .collect();
        let mut free_pos = vec![u32::MAX; lattice.len()];
        for (i, &k) in free.iter().enumerate() {
            free_pos[k] = i as u32;
        }
        Ok(Self {
            refinement,
            q,
            lattice,
            boundary,
            free,
            free_pos,
        })
    }

    pub fn ndofs(&self) -> usize {
        self.lattice.len()
    }

    pub fn free_dofs(&self) -> &[usize] {
        &self.free
    }

    pub fn free_position(&self, dof: usize) -> Option<usize> {
        let p = self.free_pos[dof];
        (p != u32::MAX).then_some(p as usize)
    }

    /// Fine mesh size.
    pub fn h(&self) -> f64 {
        self.refinement.fine.h
    }

    pub fn domain(&self) -> Domain {
        self.refinement.fine.domain
    }

    pub fn n_fine(&self) -> usize {
        self.refinement.fine.n
    }

    pub fn dof_position(&self, k: usize) -> [f64; 2] {
        let (a, b) = self.lattice.coords(k);
        let d = self.domain();
        let step = self.h() / self.q as f64;
        [d.origin[0] + a as f64 * step, d.origin[1] + b as f64 * step]
    }

    /// Global dofs of fine element `(ix, iy)` in local order.
    pub fn element_dofs(&self, ix: usize, iy: usize) -> Vec<usize> {
        let q = self.q;
        let mut out = Vec::with_capacity((q + 1) * (q + 1));
        for beta in 0..=q {
            for alpha in 0..=q {
                out.push(self.lattice.index(ix * q + alpha, iy * q + beta));
            }
        }
        out
    }

    /// Nodal interpolant; Dirichlet dofs are set to zero.
    pub fn interpolate(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        (0..self.ndofs())
            .map(|k| {
                if self.boundary == BoundaryCondition::DirichletZero && self.free_pos[k] == u32::MAX
                {
                    0.0
                } else {
                    let [x, y] = self.dof_position(k);
                    f(x, y)
                }
            })
            .collect()
    }

    /// Nodal interpolant of data at every lattice point, boundary included.
    pub fn interpolate_data(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        (0..self.ndofs())
            .map(|k| {
                let [x, y] = self.dof_position(k);
                f(x, y)
            })
            .collect()
    }

    pub fn restrict_free<S: Scalar>(&self, v: &[S]) -> Vec<S> {
        self.free.iter().map(|&k| v[k]).collect()
    }

    pub fn extend_free<S: Scalar>(&self, v: &[S]) -> Vec<S> {
        let mut out = vec![S::zero(); self.ndofs()];
        for (&k, &x) in self.free.iter().zip(v) {
            out[k] = x;
        }
        out
    }
}

/// Fine-space function given by its values at every lattice point.
#[derive(Clone, Debug, PartialEq)]
pub struct FeFunction<S = f64> {
    pub values: Vec<S>,
}

/// Bilinear form `∫ d ∇u·∇v + c ∫ w u v + r ∫_∂Ω u v` assembled element by
/// element. `d` and `w` are piecewise constant on the fine mesh.
#[derive(Clone, Debug)]
pub struct FineForm<S: Scalar> {
    q: usize,
    n: usize,
    h: f64,
    lattice: Lattice,
    diffusion: Vec<f64>,
    reaction: Option<(Vec<f64>, S)>,
    robin: Option<S>,
    kref: Vec<f64>,
    mref: Vec<f64>,
    m1: Vec<Vec<f64>>,
}

impl<S: Scalar> FineForm<S> {
    /// Diffusion only.
    pub fn diffusion(space: &FeSpace, a: &CoefficientField) -> Result<Self> {
        Self::new(space, Some(a), None, None)
    }

    /// General form. A missing diffusion field means no gradient term.
    pub fn new(
        space: &FeSpace,
        diffusion: Option<&CoefficientField>,
        reaction: Option<(&CoefficientField, S)>,
        robin: Option<S>,
    ) -> Result<Self> {
        let n = space.n_fine();
        let check = |c: &CoefficientField| -> Result<Vec<f64>> {
            if c.domain != space.domain() {
                return Err(invalid(
                    "coefficient field and fine mesh cover different domains",
                ));
            }
            c.on_fine_mesh(n)
        };
        let diffusion = match diffusion {
            Some(a) => {
                let (lo, _) = a.bounds();
                if lo <= 0.0 {
                    return Err(invalid(format!(
                        "diffusion coefficient must be positive, minimum is {lo}"
                    )));
                }
                check(a)?
            }
            None => vec![0.0; n * n],
        };
        let reaction = match reaction {
            Some((w, c)) => Some((check(w)?, c)),
            None => None,
        };
        let q = space.q;
        let (k1, m1) = reference_matrices_1d(q);
        let nl = (q + 1) * (q + 1);
        let mut kref = vec![0.0; nl * nl];
        let mut mref = vec![0.0; nl * nl];
        for b1 in 0..=q {
            for a1 in 0..=q {
                for b2 in 0..=q {
                    for a2 in 0..=q {
                        let (i, j) = (b1 * (q + 1) + a1, b2 * (q + 1) + a2);
                        kref[i * nl + j] = k1[a1][a2] * m1[b1][b2] + m1[a1][a2] * k1[b1][b2];
                        mref[i * nl + j] = m1[a1][a2] * m1[b1][b2];
                    }
                }
            }
        }
        Ok(Self {
            q,
            n,
            h: space.h(),
            lattice: space.lattice,
            diffusion,
            reaction,
            robin,
            kref,
            mref,
            m1,
        })
    }

    pub fn local_len(&self) -> usize {
        (self.q + 1) * (self.q + 1)
    }

    /// Dense element matrix of fine element `(ix, iy)`, row-major.
    pub fn element_matrix(&self, ix: usize, iy: usize, out: &mut [S]) {
        let nl = self.local_len();
        debug_assert_eq!(out.len(), nl * nl);
        let e = iy * self.n + ix;
        let d = self.diffusion[e];
        let (w, c) = match &self.reaction {
            Some((w, c)) => (w[e] * self.h * self.h, *c),
            None => (0.0, S::zero()),
        };
        for ((o, &k), &m) in out.iter_mut().zip(&self.kref).zip(&self.mref) {
            *o = S::from_f64(d * k) + c.scale(w * m);
        }
        if let Some(r) = self.robin {
            let q = self.q;
            let last = self.n - 1;
            // Each boundary edge contributes h · M1 on its q + 1 nodes.
            let edges: [(bool, Box<dyn Fn(usize) -> usize>); 4] = [
                (iy == 0, Box::new(|t| t)),
                (iy == last, Box::new(move |t| q * (q + 1) + t)),
                (ix == 0, Box::new(move |t| t * (q + 1))),
                (ix == last, Box::new(move |t| t * (q + 1) + q)),
            ];
            for (on_boundary, local) in edges.iter() {
                if !on_boundary {
                    continue;
                }
                for s in 0..=q {
                    for t in 0..=q {
                        out[local(s) * nl + local(t)] += r.scale(self.h * self.m1[s][t]);
                    }
                }
            }
        }
    }

    /// Lattice indices of fine element `(ix, iy)` in local order.
    pub fn element_dofs(&self, ix: usize, iy: usize) -> impl Iterator<Item = usize> + '_ {
        let q = self.q;
        (0..=q).flat_map(move |b| (0..=q).map(move |a| self.lattice.index(ix * q + a, iy * q + b)))
    }

    /// Assembles the form over all lattice points.
    pub fn assemble(&self, par: Parallelism) -> SparseMatrix<S> {
        let n = self.n;
        let rows: Vec<usize> = (0..n).collect();
        let nl = self.local_len();
        let chunks = par::map(par, &rows, |&iy| {
            let mut local = vec![S::zero(); nl * nl];
            let mut trip = Vec::with_capacity(n * nl * nl);
            for ix in 0..n {
                self.element_matrix(ix, iy, &mut local);
                let dofs: Vec<usize> = self.element_dofs(ix, iy).collect();
                for (i, &gi) in dofs.iter().enumerate() {
                    for (j, &gj) in dofs.iter().enumerate() {
                        trip.push((gi, gj, local[i * nl + j]));
                    }
                }
            }
            trip
        });
        let trip: Vec<(usize, usize, S)> = chunks.into_iter().flatten().collect();
        let len = self.lattice.len();
        assemble(len, len, &trip).expect("element dofs lie on the lattice")
    }

    /// The form restricted to the fine elements `[x0, x1) × [y0, y1)`, with
    /// rows and columns indexed by lattice offset inside `bx`.
    pub fn assemble_block(
        &self,
        elements: (usize, usize, usize, usize),
        bx: &crate::grid::LatticeBox,
    ) -> SparseMatrix<S> {
        let nl = self.local_len();
        let q = self.q;
        let (x0, x1, y0, y1) = elements;
        let mut local = vec![S::zero(); nl * nl];
        let mut trip = Vec::with_capacity((x1 - x0) * (y1 - y0) * nl * nl);
        for iy in y0..y1 {
            for ix in x0..x1 {
                self.element_matrix(ix, iy, &mut local);
                let offs: Vec<usize> = (0..=q)
                    .flat_map(|b| (0..=q).map(move |a| (ix * q + a, iy * q + b)))
                    .map(|(a, b)| bx.offset(a, b))
                    .collect();
                for (i, &oi) in offs.iter().enumerate() {
                    for (j, &oj) in offs.iter().enumerate() {
                        trip.push((oi, oj, local[i * nl + j]));
                    }
                }
            }
        }
        assemble(bx.len(), bx.len(), &trip).expect("element offsets lie inside the box")
    }

    /// `y += A_K x` for the form restricted to the fine elements with indices
    /// in `[x0, x1) × [y0, y1)`, acting on vectors indexed by lattice offset
    /// inside `bx` (a lattice box covering those elements).
    pub(crate) fn apply_block(
        &self,
        elements: (usize, usize, usize, usize),
        bx: &crate::grid::LatticeBox,
        x: &[S],
        y: &mut [S],
    ) {
        let nl = self.local_len();
        let q = self.q;
        let mut local = vec![S::zero(); nl * nl];
        let mut xs = vec![S::zero(); nl];
        let (x0, x1, y0, y1) = elements;
        for iy in y0..y1 {
            for ix in x0..x1 {
                self.element_matrix(ix, iy, &mut local);
                let offs: Vec<usize> = (0..=q)
                    .flat_map(|b| (0..=q).map(move |a| (ix * q + a, iy * q + b)))
                    .map(|(a, b)| bx.offset(a, b))
                    .collect();
                for (l, &o) in offs.iter().enumerate() {
                    xs[l] = x[o];
                }
                for (i, &o) in offs.iter().enumerate() {
                    let mut acc = S::zero();
                    for j in 0..nl {
                        acc += local[i * nl + j] * xs[j];
                    }
                    y[o] += acc;
                }
            }
        }
    }
}

/// Stiffness matrix `∫ A ∇φ_i·∇φ_j` over all dofs.
pub fn assemble_stiffness(space: &FeSpace, a: &CoefficientField) -> Result<SparseMatrix<f64>> {
    Ok(FineForm::<f64>::diffusion(space, a)?.assemble(Parallelism::default()))
}

/// Mass matrix `∫ w φ_i φ_j` over all dofs.
pub fn assemble_mass(space: &FeSpace, weight: &CoefficientField) -> Result<SparseMatrix<f64>> {
    Ok(
        FineForm::<f64>::new(space, None, Some((weight, 1.0)), None)?
            .assemble(Parallelism::default()),
    )
}

/// Unit-weight mass matrix.
pub fn assemble_unit_mass(space: &FeSpace) -> SparseMatrix<f64> {
    assemble_mass(space, &CoefficientField::constant(space.domain(), 1.0))
        .expect("constant field is aligned")
}

/// Energy, `L²` and gradient norms.
///
/// `h1` is the seminorm `‖∇u‖`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Norms {
    pub l2: f64,
    pub energy: f64,
    pub h1: f64,
}

/// Matrices needed to evaluate [`Norms`].
#[derive(Clone, Debug)]
pub struct NormOperators {
    pub stiffness: SparseMatrix<f64>,
    pub laplace: SparseMatrix<f64>,
    pub mass: SparseMatrix<f64>,
}

impl NormOperators {
    pub fn new(space: &FeSpace, a: &CoefficientField) -> Result<Self> {
        let one = CoefficientField::constant(space.domain(), 1.0);
        Ok(Self {
            stiffness: assemble_stiffness(space, a)?,
            laplace: assemble_stiffness(space, &one)?,
            mass: assemble_unit_mass(space),
        })
    }

    pub fn norms<S: Scalar>(&self, u: &[S]) -> Norms {
        let q = |m: &SparseMatrix<f64>| -> f64 {
            let mc = m.map(S::from_f64);
            mc.quadratic(u, u).real().max(0.0).sqrt()
        };
        Norms {
            l2: q(&self.mass),
            energy: q(&self.stiffness),
            h1: q(&self.laplace),
        }
    }
}

/// Galerkin solution of `a(u, v) = (f, v)` in `H¹₀`, with the load computed
/// from the nodal interpolant of `f`.
pub fn solve_reference(
    space: &FeSpace,
    a: &CoefficientField,
    f: impl Fn(f64, f64) -> f64,
) -> Result<FeFunction<f64>> {
    if space.boundary != BoundaryCondition::DirichletZero {
        return Err(invalid("reference elliptic solves need a Dirichlet space"));
    }
    let k = assemble_stiffness(space, a)?;
    let load = load_vector(space, f);
    solve_dirichlet(space, &k, &load)
}

/// `((f_I, φ_k))_k` for the nodal interpolant `f_I` of `f` on all lattice
/// points.
pub fn load_vector(space: &FeSpace, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    assemble_unit_mass(space).mul_vec(&space.interpolate_data(f))
}

/// Solves `K u = load` on the free dofs of a Dirichlet space.
pub fn solve_dirichlet(
    space: &FeSpace,
    k: &SparseMatrix<f64>,
    load: &[f64],
) -> Result<FeFunction<f64>> {
    let free = space.free_dofs();
    let kf = k.submatrix(free, free);
    let rhs = space.restrict_free(load);
    if rhs.iter().all(|&v| v == 0.0) {
        return Ok(FeFunction {
            values: vec![0.0; space.ndofs()],
        });
    }
    let x = Factorization::cholesky(&kf)?.solve(&rhs)?;
    Ok(FeFunction {
        values: space.extend_free(&x),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_mesh, refine};
    use std::f64::consts::PI;

    fn space(n_coarse: usize, r: usize, q: usize, bc: BoundaryCondition) -> FeSpace {
        let mesh = build_mesh(Domain::unit_square(), n_coarse).unwrap();
        FeSpace::new(refine(&mesh, r).unwrap(), q, bc).unwrap()
    }

    #[test]
    fn q1_element_stiffness_and_mass() {
        let s = space(1, 1, 1, BoundaryCondition::Natural);
        let one = CoefficientField::constant(Domain::unit_square(), 1.0);
        let k = assemble_stiffness(&s, &one).unwrap().to_dense();
        let m = assemble_unit_mass(&s).to_dense();
        // Local order (0,0),(1,0),(0,1),(1,1) coincides with lattice order.
        for i in 0..4 {
            assert!((k[i][i] - 2.0 / 3.0).abs() < 1e-15);
            assert!((k[i][3 - i] + 1.0 / 3.0).abs() < 1e-15);
            assert!((m[i][i] - 1.0 / 9.0).abs() < 1e-15);
            assert!((m[i][3 - i] - 1.0 / 36.0).abs() < 1e-15);
        }
        assert!((m[0][1] - 1.0 / 18.0).abs() < 1e-15);
        assert!((k[0][1] + 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn stiffness_scales_and_annihilates_constants() {
        let s = space(2, 1, 2, BoundaryCondition::Natural);
        let one = CoefficientField::constant(Domain::unit_square(), 1.0);
        let two = CoefficientField::constant(Domain::unit_square(), 2.0);
        let k1 = assemble_stiffness(&s, &one).unwrap();
        let k2 = assemble_stiffness(&s, &two).unwrap();
        for (a, b) in k1.values().iter().zip(k2.values()) {
            assert!((2.0 * a - b).abs() < 1e-14);
        }
        let r = k1.mul_vec(&vec![1.0; s.ndofs()]);
        assert!(r.iter().all(|v| v.abs() < 1e-12));
        assert!(k1.symmetry_defect() <= 1e-14);
    }

    #[test]
    fn mass_sums_to_area() {
        for q in 1..=3 {
            let s = space(2, 2, q, BoundaryCondition::Natural);
            let m = assemble_unit_mass(&s);
            assert!((m.values().iter().sum::<f64>() - 1.0).abs() < 1e-13);
            let two = CoefficientField::constant(Domain::unit_square(), 2.0);
            let m2 = assemble_mass(&s, &two).unwrap();
            assert!((m2.values().iter().sum::<f64>() - 2.0).abs() < 1e-13);
        }
    }

    #[test]
    fn misaligned_coefficient_is_rejected() {
        let s = space(2, 2, 1, BoundaryCondition::Natural);
        let c = CoefficientField::new(Domain::unit_square(), 3, vec![1.0; 9]).unwrap();
        assert!(matches!(
            assemble_stiffness(&s, &c),
            Err(Error::Alignment { m: 3, n_fine: 4 })
        ));
    }

    #[test]
    fn robin_term_integrates_the_boundary() {
        let s = space(2, 2, 2, BoundaryCondition::Natural);
        let form = FineForm::<f64>::new(&s, None, None, Some(1.0)).unwrap();
        let n = form.assemble(Parallelism::Sequential);
        let ones = vec![1.0; s.ndofs()];
        assert!((n.bilinear(&ones, &ones) - 4.0).abs() < 1e-13);
    }

    #[test]
    fn poisson_sine_solution() {
        let s = space(4, 16, 1, BoundaryCondition::DirichletZero);
        let one = CoefficientField::constant(Domain::unit_square(), 1.0);
        let u = solve_reference(&s, &one, |x, y| {
            2.0 * PI * PI * (PI * x).sin() * (PI * y).sin()
        })
        .unwrap();
        let exact = s.interpolate(|x, y| (PI * x).sin() * (PI * y).sin());
        let err = u
            .values
            .iter()
            .zip(&exact)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err <= 5e-3, "max nodal error {err}");
        let zero = solve_reference(&s, &one, |_, _| 0.0).unwrap();
        assert!(zero.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn energy_of_sine_interpolant() {
        let s = space(4, 32, 1, BoundaryCondition::DirichletZero);
        let ops = NormOperators::new(&s, &CoefficientField::constant(Domain::unit_square(), 1.0))
            .unwrap();
        let u = s.interpolate(|x, y| (PI * x).sin() * (PI * y).sin());
        let nrm = ops.norms(&u);
        assert!((nrm.energy.powi(2) - PI * PI / 2.0).abs() < 2e-3);
        assert!((nrm.l2.powi(2) - 0.25).abs() < 1e-3);
        let z = ops.norms(&vec![0.0; s.ndofs()]);
        assert_eq!((z.l2, z.energy, z.h1), (0.0, 0.0, 0.0));
        let scaled: Vec<f64> = u.iter().map(|v| -3.0 * v).collect();
        let n3 = ops.norms(&scaled);
        assert!((n3.energy - 3.0 * nrm.energy).abs() < 1e-12);
    }
}
