//! Gross–Pitaevskii ground states on LOD spaces.
//!
//! The energy is `E(v) = ½ a(v, v) + (κ_g/4) ∫ v⁴` with
//! `a(w, v) = (∇w, ∇v) + (𝒱 w, v)`. Ground states are computed by projected
//! Sobolev gradient descent in the `a`-metric: with `g = A u + κ_g N(u)`,
//! `N(u) = (∫ u³ φ_k)_k`, the direction is `d = A⁻¹g − α A⁻¹Mu` where `α`
//! makes `d` `M`-orthogonal to `u`. Steps `u ← (u − τd)/‖u − τd‖` halve `τ`
//! from one until the energy decreases.
//!
//! Quartic and cubic integrals use a tensor Gauss rule with `2q + 1` points
//! per direction on every fine element, exact for `Q^q` functions.

use crate::basis::LodBasis;
use crate::constraints::{build_space, qoi, Mode};
use crate::corrector::{assemble_basis, LodContext};
use crate::error::{invalid, Result};
use crate::fem::{
    BoundaryCondition, CoefficientField, FeFunction, FeSpace, FineForm, NormOperators,
};
use crate::grid::{build_mesh, refine, Domain, TraceCondition};
use crate::linalg::{dot, Factorization, SparseMatrix};
use crate::lodsolve::{assemble_coarse_matrix, CoarseFactor, CoarseMatrix};
use crate::par::{self, Parallelism};
use crate::quadrature::{GaussRule, LagrangeBasis};

/// Potential and interaction strength. The domain is that of the potential.
#[derive(Clone, Debug, PartialEq)]
pub struct GpeProblem {
    pub potential: CoefficientField,
    pub kappa_g: f64,
}

impl GpeProblem {
    /// `κ_g = 0` is accepted and gives the linear eigenproblem.
    pub fn new(potential: CoefficientField, kappa_g: f64) -> Result<Self> {
        if !(kappa_g >= 0.0) || !kappa_g.is_finite() {
            return Err(invalid(format!(
                "interaction strength {kappa_g} must be non-negative"
            )));
        }
        let (lo, _) = potential.bounds();
        if lo < 0.0 {
            return Err(invalid(format!("potential takes the negative value {lo}")));
        }
        Ok(Self { potential, kappa_g })
    }

    pub fn domain(&self) -> Domain {
        self.potential.domain
    }

    /// The linear part `a`.
    pub fn form(&self, fe: &FeSpace) -> Result<FineForm<f64>> {
        let one = CoefficientField::constant(self.domain(), 1.0);
        FineForm::new(fe, Some(&one), Some((&self.potential, 1.0)), None)
    }
}

/// Fine matrices and quadrature tables for energy evaluation.
pub struct GpeOperators {
    pub fe: FeSpace,
    pub kappa_g: f64,
    /// `a` over all lattice points.
    pub a: SparseMatrix<f64>,
    pub mass: SparseMatrix<f64>,
    /// Gauss weights times element area.
    weights: Vec<f64>,
    /// Local basis values, `table[g * nl + i]`.
    table: Vec<f64>,
}

impl GpeOperators {
    pub fn new(fe: &FeSpace, prob: &GpeProblem) -> Result<Self> {
        if fe.domain() != prob.domain() {
            return Err(invalid(
                "potential and fine space live on different domains",
            ));
        }
        let a = prob.form(fe)?.assemble(Parallelism::default());
        let mass = crate::fem::assemble_unit_mass(fe);
        let q = fe.q;
        let rule = GaussRule::new(2 * q + 1);
        let lagrange = LagrangeBasis::new(q);
        let area = fe.h() * fe.h();
        let mut weights = Vec::new();
        let mut table = Vec::new();
        for (&y, &wy) in rule.points.iter().zip(&rule.weights) {
            let by = lagrange.values(y);
            for (&x, &wx) in rule.points.iter().zip(&rule.weights) {
                let bx = lagrange.values(x);
                weights.push(wx * wy * area);
                for vy in &by {
                    for vx in &bx {
                        table.push(vx * vy);
                    }
                }
            }
        }
        Ok(Self {
            fe: fe.clone(),
            kappa_g: prob.kappa_g,
            a,
            mass,
            weights,
            table,
        })
    }

    /// `f(iy, n_fine)` for every fine element row, in row order.
    fn per_row<R: Send>(&self, f: impl Fn(usize, usize) -> R + Sync + Send) -> Vec<R> {
        let rows: Vec<usize> = (0..self.fe.n_fine()).collect();
        par::map(Parallelism::default(), &rows, |&iy| f(iy, self.fe.n_fine()))
    }

    /// `u` at the quadrature points of the element with the given dofs.
    fn point_values(&self, u: &[f64], dofs: &[usize], out: &mut [f64]) {
        let nl = dofs.len();
        for (g, o) in out.iter_mut().enumerate() {
            let row = &self.table[g * nl..(g + 1) * nl];
            *o = row.iter().zip(dofs).map(|(&b, &k)| b * u[k]).sum();
        }
    }

    /// `∫ u⁴`
    pub fn quartic(&self, u: &[f64]) -> f64 {
        let ng = self.weights.len();
        self.per_row(|iy, n| {
            let mut vals = vec![0.0; ng];
            let mut acc = 0.0;
            for ix in 0..n {
                self.point_values(u, &self.fe.element_dofs(ix, iy), &mut vals);
                acc += vals
                    .iter()
                    .zip(&self.weights)
                    .map(|(&v, &w)| w * (v * v) * (v * v))
                    .sum::<f64>();
            }
            acc
        })
        .into_iter()
        .sum()
    }

    /// `(∫ u³ φ_k)_k` over all lattice points.
    pub fn cubic(&self, u: &[f64]) -> Vec<f64> {
        let ng = self.weights.len();
        let rows = self.per_row(|iy, n| {
            let mut vals = vec![0.0; ng];
            let mut out = Vec::with_capacity(n * self.table.len() / ng);
            for ix in 0..n {
                let dofs = self.fe.element_dofs(ix, iy);
                let nl = dofs.len();
                self.point_values(u, &dofs, &mut vals);
                let mut local = vec![0.0; nl];
                for (g, (&v, &w)) in vals.iter().zip(&self.weights).enumerate() {
                    let c = w * v * v * v;
                    for (l, &b) in local.iter_mut().zip(&self.table[g * nl..(g + 1) * nl]) {
                        *l += c * b;
                    }
                }
                out.extend(dofs.into_iter().zip(local));
            }
            out
        });
        let mut out = vec![0.0; self.fe.ndofs()];
        for row in rows {
            for (k, v) in row {
                out[k] += v;
            }
        }
        out
    }

    /// `E(u) = ½ a(u, u) + (κ_g/4) ∫ u⁴`
    pub fn energy(&self, u: &[f64]) -> f64 {
        0.5 * self.a.quadratic(u, u) + 0.25 * self.kappa_g * self.quartic(u)
    }

    /// `a(u, u) + κ_g ∫ u⁴` for `‖u‖ = 1`.
    pub fn eigenvalue(&self, u: &[f64]) -> f64 {
        self.a.quadratic(u, u) + self.kappa_g * self.quartic(u)
    }

    pub fn l2_norm(&self, u: &[f64]) -> f64 {
        self.mass.quadratic(u, u).max(0.0).sqrt()
    }
}

/// `E(u)` for a fine function of the problem's domain.
pub fn energy(u: &FeFunction<f64>, fe: &FeSpace, prob: &GpeProblem) -> Result<f64> {
    Ok(GpeOperators::new(fe, prob)?.energy(&u.values))
}

/// Parameters of the gradient flow.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowParams {
    /// Stop when `|E_{n+1} − E_n|` falls to this value.
    pub tol: f64,
    pub max_iter: usize,
    /// Smallest step tried by the line search.
    pub min_step: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 5000,
            min_step: 1e-12,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GroundState {
    pub u: FeFunction<f64>,
    /// Coefficients in the space the flow ran in (basis or free fine dofs).
    pub coefficients: Vec<f64>,
    pub energy: f64,
    pub eigenvalue: f64,
    /// `‖u‖⁴_{L⁴}`
    pub quartic: f64,
    /// Energy after every accepted step, starting with the initial guess.
    pub log: Vec<f64>,
    pub converged: bool,
    pub last_delta: f64,
}

/// A space the flow can run in: coefficient vectors map to fine functions.
trait FlowSpace {
    fn prolong(&self, c: &[f64]) -> Vec<f64>;
    /// Adjoint of `prolong`.
    fn restrict(&self, v: &[f64]) -> Vec<f64>;
    fn solve_a(&self, rhs: &[f64]) -> Result<Vec<f64>>;
}

struct CoarseFlow<'a> {
    basis: &'a LodBasis<f64>,
    factor: CoarseFactor<f64>,
}

impl FlowSpace for CoarseFlow<'_> {
    fn prolong(&self, c: &[f64]) -> Vec<f64> {
        self.basis.combine(c)
    }
    fn restrict(&self, v: &[f64]) -> Vec<f64> {
        self.basis.project(v, Parallelism::default())
    }
    fn solve_a(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        self.factor.solve(rhs)
    }
}

struct FineFlow<'a> {
    fe: &'a FeSpace,
    factor: Factorization<f64>,
}

impl FlowSpace for FineFlow<'_> {
    fn prolong(&self, c: &[f64]) -> Vec<f64> {
        self.fe.extend_free(c)
    }
    fn restrict(&self, v: &[f64]) -> Vec<f64> {
        self.fe.restrict_free(v)
    }
    fn solve_a(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        self.factor.solve(rhs)
    }
}

/// The initial bump `exp(−|x − x_c|²/2)` around the domain centre.
fn initial_bump(domain: Domain) -> impl Fn(f64, f64) -> f64 {
    let cx = domain.origin[0] + 0.5 * domain.side;
    let cy = domain.origin[1] + 0.5 * domain.side;
    move |x, y| (-0.5 * ((x - cx).powi(2) + (y - cy).powi(2))).exp()
}

fn normalize(space: &impl FlowSpace, ops: &GpeOperators, c: &mut [f64]) -> Result<Vec<f64>> {
    let u = space.prolong(c);
    let nrm = ops.l2_norm(&u);
    if !(nrm > 0.0) || !nrm.is_finite() {
        return Err(invalid("flow iterate has zero norm"));
    }
    for v in c.iter_mut() {
        *v /= nrm;
    }
    Ok(u.into_iter().map(|v| v / nrm).collect())
}

fn run_flow(
    space: &impl FlowSpace,
    ops: &GpeOperators,
    mut c: Vec<f64>,
    params: FlowParams,
) -> Result<GroundState> {
    let mut u = normalize(space, ops, &mut c)?;
    let mut e = ops.energy(&u);
    let mut log = vec![e];
    let mut converged = false;
    let mut last_delta = f64::INFINITY;
    for _ in 0..params.max_iter {
        let mut g = ops.a.mul_vec(&u);
        if ops.kappa_g != 0.0 {
            for (gi, ni) in g.iter_mut().zip(ops.cubic(&u)) {
                *gi += ops.kappa_g * ni;
            }
        }
        let g = space.restrict(&g);
        let mc = space.restrict(&ops.mass.mul_vec(&u));
        let s = space.solve_a(&g)?;
        let w = space.solve_a(&mc)?;
        let alpha = dot(&mc, &s) / dot(&mc, &w);
        let d: Vec<f64> = s.iter().zip(&w).map(|(a, b)| a - alpha * b).collect();
        let mut tau = 1.0;
        let mut accepted = None;
        while tau >= params.min_step {
            let mut trial: Vec<f64> = c.iter().zip(&d).map(|(a, b)| a - tau * b).collect();
            let ut = normalize(space, ops, &mut trial)?;
            let et = ops.energy(&ut);
            if et < e {
                accepted = Some((trial, ut, et));
                break;
            }
            tau *= 0.5;
        }
        let Some((ct, ut, et)) = accepted else {
            // No decrease along the descent direction: stationary to rounding.
            converged = true;
            last_delta = 0.0;
            break;
        };
        last_delta = e - et;
        c = ct;
        u = ut;
        e = et;
        log.push(e);
        if last_delta <= params.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "gradient flow stopped after {} iterations with energy change {last_delta:.3e}",
            params.max_iter
        );
    }
    // Sign normalization: positive mean.
    let mean: f64 = ops.mass.mul_vec(&u).iter().sum();
    if mean < 0.0 {
        u.iter_mut().for_each(|v| *v = -*v);
        c.iter_mut().for_each(|v| *v = -*v);
    }
    let quartic = ops.quartic(&u);
    Ok(GroundState {
        energy: ops.energy(&u),
        eigenvalue: ops.eigenvalue(&u),
        quartic,
        u: FeFunction { values: u },
        coefficients: c,
        log,
        converged,
        last_delta,
    })
}

/// Discretization of one GPE LOD run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GpeParams {
    pub n_coarse: usize,
    pub ratio: usize,
    pub q: usize,
    pub p: usize,
    pub mode: Mode,
    pub ell: usize,
}

/// LOD space for the linear part `a` of the energy.
pub struct GpeLod {
    pub ctx: LodContext<f64>,
    pub basis: LodBasis<f64>,
    pub matrix: CoarseMatrix<f64>,
}

/// Builds the localized basis for `a(w, v) = (∇w, ∇v) + (𝒱w, v)` in `H¹₀`.
pub fn build_gpe_basis(prob: &GpeProblem, params: GpeParams, par: Parallelism) -> Result<GpeLod> {
    let mesh = build_mesh(prob.domain(), params.n_coarse)?;
    let fe = FeSpace::new(
        refine(&mesh, params.ratio)?,
        params.q,
        BoundaryCondition::DirichletZero,
    )?;
    let form = prob.form(&fe)?;
    let space = build_space(&mesh, params.p, params.mode)?;
    let ctx = LodContext::new(fe, space, form, TraceCondition::Vanishing)?;
    let basis = assemble_basis(&ctx, params.ell, par)?;
    let matrix = assemble_coarse_matrix(&basis, &ctx.form, par);
    Ok(GpeLod { ctx, basis, matrix })
}

/// Ground state on the LOD space, started from the basis expansion
/// `Σ_j q_j(g) φ_j` of the bump `g`.
pub fn ground_state(lod: &GpeLod, ops: &GpeOperators, params: FlowParams) -> Result<GroundState> {
    if lod.basis.is_empty() {
        return Err(invalid("empty basis"));
    }
    let space = CoarseFlow {
        basis: &lod.basis,
        factor: lod.matrix.factor(true)?,
    };
    let bump = ops.fe.interpolate(initial_bump(ops.fe.domain()));
    let c0 = qoi(&lod.ctx.b, &bump);
    run_flow(&space, ops, c0, params)
}

/// Ground state in the full fine space.
pub fn reference_ground_state(ops: &GpeOperators, params: FlowParams) -> Result<GroundState> {
    let fe = &ops.fe;
    if fe.boundary != BoundaryCondition::DirichletZero {
        return Err(invalid("ground states need a Dirichlet space"));
    }
    let free = fe.free_dofs();
    let space = FineFlow {
        fe,
        factor: Factorization::cholesky(&ops.a.submatrix(free, free))?,
    };
    let c0 = fe.restrict_free(&fe.interpolate(initial_bump(fe.domain())));
    run_flow(&space, ops, c0, params)
}

/// Plain differences between two ground states on the same fine space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GpeErrors {
    /// `‖∇(u − u_ref)‖`
    pub h1: f64,
    pub l2: f64,
    pub energy: f64,
    pub eigenvalue: f64,
}

/// Errors of `gs` against `reference`; both are sign-normalized first.
pub fn gpe_errors(
    gs: &GroundState,
    reference: &GroundState,
    norms: &NormOperators,
) -> Result<GpeErrors> {
    let (u, r) = (&gs.u.values, &reference.u.values);
    if u.len() != r.len() {
        return Err(invalid("ground states live on different spaces"));
    }
    let sign = |v: &[f64]| {
        if norms.mass.mul_vec(v).iter().sum::<f64>() < 0.0 {
            -1.0
        } else {
            1.0
        }
    };
    let (su, sr) = (sign(u), sign(r));
    let d: Vec<f64> = u.iter().zip(r).map(|(a, b)| su * a - sr * b).collect();
    let n = norms.norms(&d);
    Ok(GpeErrors {
        h1: n.h1,
        l2: n.l2,
        energy: (gs.energy - reference.energy).abs(),
        eigenvalue: (gs.eigenvalue - reference.eigenvalue).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn unit_problem(kappa_g: f64) -> GpeProblem {
        GpeProblem::new(
            CoefficientField::constant(Domain::unit_square(), 0.0),
            kappa_g,
        )
        .unwrap()
    }

    fn fine(n: usize, q: usize) -> FeSpace {
        let mesh = build_mesh(Domain::unit_square(), 1).unwrap();
        FeSpace::new(
            refine(&mesh, n).unwrap(),
            q,
            BoundaryCondition::DirichletZero,
        )
        .unwrap()
    }

    #[test]
    fn invalid_problems_are_rejected() {
        let d = Domain::unit_square();
        assert!(GpeProblem::new(CoefficientField::constant(d, -1.0), 1.0).is_err());
        assert!(GpeProblem::new(CoefficientField::constant(d, 0.0), -1.0).is_err());
        assert!(GpeProblem::new(CoefficientField::constant(d, 0.0), f64::NAN).is_err());
    }

    #[test]
    fn quartic_is_exact_for_bilinears() {
        let fe = fine(3, 1);
        let ops = GpeOperators::new(&fe, &unit_problem(1.0)).unwrap();
        // u = xy on the full lattice: ∫ x⁴y⁴ = 1/25.
        let u = fe.interpolate_data(|x, y| x * y);
        assert!((ops.quartic(&u) - 1.0 / 25.0).abs() < 1e-14);
        // Σ_k (∫ u³ φ_k) = ∫ u³ = 1/16.
        assert!((ops.cubic(&u).iter().sum::<f64>() - 1.0 / 16.0).abs() < 1e-14);
    }

    #[test]
    fn energy_is_even_and_vanishes_at_zero() {
        let fe = fine(6, 2);
        let ops = GpeOperators::new(&fe, &unit_problem(3.0)).unwrap();
        let u = fe.interpolate(|x, y| x * (1.0 - y) * (x + y));
        let m: Vec<f64> = u.iter().map(|v| -v).collect();
        assert_eq!(ops.energy(&u), ops.energy(&m));
        assert_eq!(ops.energy(&vec![0.0; fe.ndofs()]), 0.0);
    }

    #[test]
    fn laplace_eigenfunction_energy() {
        let fe = fine(32, 2);
        let ops = GpeOperators::new(&fe, &unit_problem(0.0)).unwrap();
        let mut u = fe.interpolate(|x, y| (PI * x).sin() * (PI * y).sin());
        let n = ops.l2_norm(&u);
        u.iter_mut().for_each(|v| *v /= n);
        assert!((ops.energy(&u) - PI * PI).abs() < 1e-3 * PI * PI);
    }

    #[test]
    fn fine_flow_finds_the_laplace_ground_state() {
        let fe = fine(16, 1);
        let ops = GpeOperators::new(&fe, &unit_problem(0.0)).unwrap();
        let gs = reference_ground_state(&ops, FlowParams::default()).unwrap();
        assert!(gs.converged);
        assert!((gs.eigenvalue - 2.0 * PI * PI).abs() < 0.02 * 2.0 * PI * PI);
        assert!((gs.eigenvalue - 2.0 * gs.energy).abs() < 1e-9);
        assert!(gs.log.windows(2).all(|w| w[1] <= w[0]));
        assert!((ops.l2_norm(&gs.u.values) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn interacting_ground_state_is_positive() {
        let fe = fine(16, 1);
        let ops = GpeOperators::new(&fe, &unit_problem(50.0)).unwrap();
        let gs = reference_ground_state(&ops, FlowParams::default()).unwrap();
        assert!(gs.converged);
        let max = gs.u.values.iter().cloned().fold(0.0, f64::max);
        assert!(gs.u.values.iter().all(|&v| v >= -1e-8 * max));
        let identity = gs.eigenvalue - 2.0 * gs.energy - 0.5 * 50.0 * gs.quartic;
        assert!(identity.abs() < 1e-8);
    }

    #[test]
    fn lod_ground_state_approaches_reference() {
        let prob = unit_problem(10.0);
        let params = GpeParams {
            n_coarse: 4,
            ratio: 8,
            q: 1,
            p: 1,
            mode: Mode::Dg,
            ell: 4,
        };
        let lod = build_gpe_basis(&prob, params, Parallelism::Sequential).unwrap();
        let ops = GpeOperators::new(&lod.ctx.fe, &prob).unwrap();
        let gs = ground_state(&lod, &ops, FlowParams::default()).unwrap();
        let reference = reference_ground_state(&ops, FlowParams::default()).unwrap();
        let one = CoefficientField::constant(prob.domain(), 1.0);
        let norms = NormOperators::new(&lod.ctx.fe, &one).unwrap();
        let err = gpe_errors(&gs, &reference, &norms).unwrap();
        assert!(err.energy < 1e-3 * reference.energy, "{err:?}");
        assert!(gs.energy >= reference.energy - 1e-12);
        let flipped = GroundState {
            u: FeFunction {
                values: reference.u.values.iter().map(|v| -v).collect(),
            },
            ..reference.clone()
        };
        let zero = gpe_errors(&flipped, &reference, &norms).unwrap();
        assert_eq!((zero.h1, zero.l2, zero.energy), (0.0, 0.0, 0.0));
    }
}
