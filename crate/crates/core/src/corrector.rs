//! Element corrector problems and assembly of the localized basis.
//!
//! For a coarse element `T` and a basis index `j`, the corrector
//! `ψ_{j,T} ∈ V_T^ℓ` with multiplier `λ ∈ M_T^ℓ` solves
//!
//! ```text
//! a(ψ, w) + b(w, λ) = Σ_z κ_zj a_T(Λ_z¹, w)
//! b(ψ, μ)           = -|T∩ω_j|/|ω_j| μ_j + Σ_z κ_zj (μ, Λ_z¹)_T
//! ```
//!
//! and `φ_j = Σ_z κ_zj Λ_z¹ - Σ_T ψ_{j,T}`. Only the elements of the
//! sparsity set of `j` contribute: `T ∈ ω_j` (CG), `T ∈ N(K)` sharing an
//! interior vertex with `K` or `T = K` (DG constant mode on `K`), and `T = K`
//! (other DG modes on `K`).
//!
//! Elements whose patches coincide share one factorization. Patch groups are
//! solved independently and merged into the basis in a fixed order, so the
//! result does not depend on the thread schedule.

use std::collections::BTreeMap;

use crate::basis::{BasisFunction, LodBasis};
use crate::constraints::{assemble_b, ConstraintSpace, Mode};
use crate::error::{invalid, Result};
use crate::fem::{FeSpace, FineForm};
use crate::grid::{self, ElementBox, LatticeBox, Patch, TraceCondition};
use crate::interp::{build_interpolator_with, QuasiInterpolator};
use crate::linalg::{KktFactorization, Scalar, SparseMatrix};
use crate::par::{self, Parallelism};

/// Everything the corrector problems read: fine space, bilinear form,
/// constraint space, coupling matrix and quasi-interpolation.
pub struct LodContext<S: Scalar> {
    pub fe: FeSpace,
    pub space: ConstraintSpace,
    pub form: FineForm<S>,
    /// The form assembled over all lattice points.
    pub matrix: SparseMatrix<S>,
    pub b: SparseMatrix<f64>,
    pub interp: QuasiInterpolator,
    pub trace: TraceCondition,
}

impl<S: Scalar> LodContext<S> {
    pub fn new(
        fe: FeSpace,
        space: ConstraintSpace,
        form: FineForm<S>,
        trace: TraceCondition,
    ) -> Result<Self> {
        let b = assemble_b(&space, &fe)?;
        let matrix = form.assemble(Parallelism::default());
        let interp = build_interpolator_with(&space, trace == TraceCondition::InteriorOnly);
        let (r, p) = (fe.refinement.ratio, space.p);
        if r < 2 * (p + 1) {
            log::warn!(
                "refinement ratio {r} is below 2(p+1) = {}; local constraint blocks may lose rank",
                2 * (p + 1)
            );
        }
        Ok(Self {
            fe,
            space,
            form,
            matrix,
            b,
            interp,
            trace,
        })
    }

    fn mesh_n(&self) -> usize {
        self.space.mesh.n
    }

    /// `|T∩ω_j| / |ω_j|` for element index `t`.
    pub fn weight(&self, j: usize, t: usize) -> f64 {
        let (ix, iy) = self.space.mesh.element_coords(t);
        self.space.support_weight(j, ix, iy)
    }

    /// Basis indices whose corrector on `t` can be non-zero, ascending.
    pub fn correctors_on(&self, t: usize) -> Vec<usize> {
        let mesh = &self.space.mesh;
        let (ix, iy) = mesh.element_coords(t);
        match self.space.mode {
            Mode::Cg => self.space.functions_on_element(ix, iy),
            Mode::Dg => {
                let mut out = Vec::new();
                let ring = ElementBox::single(ix, iy).expand(1, mesh.n);
                for k in ring.elements(mesh.n) {
                    if k == t || shares_hat_vertex(mesh, t, k, self.interp.boundary_nodes) {
                        out.push(self.space.dg_index(k, 0, 0));
                    }
                }
                let modes = self.space.modes_per_element();
                out.extend(t * modes + 1..(t + 1) * modes);
                out.sort_unstable();
                out
            }
        }
    }

    /// Elements `T` whose corrector contributes to `φ_j`, ascending.
    pub fn sparsity_set(&self, j: usize) -> Vec<usize> {
        let mesh = &self.space.mesh;
        let n = mesh.n;
        match self.space.mode {
            Mode::Cg => self.space.support(j).elements(n).collect(),
            Mode::Dg => {
                let (k, _, _) = self.space.dg_mode(j);
                if !self.space.is_constant_mode(j) {
                    return vec![k];
                }
                let (kx, ky) = mesh.element_coords(k);
                ElementBox::single(kx, ky)
                    .expand(1, n)
                    .elements(n)
                    .filter(|&t| {
                        t == k || shares_hat_vertex(mesh, t, k, self.interp.boundary_nodes)
                    })
                    .collect()
            }
        }
    }

    /// Element rectangle of patch `N^ℓ(T)`.
    pub fn patch_box(&self, t: usize, ell: usize) -> ElementBox {
        let (ix, iy) = self.space.mesh.element_coords(t);
        ElementBox::single(ix, iy).expand(ell, self.mesh_n())
    }

    /// Fine vector of `Σ_z κ_zj Λ_z¹` restricted to the closure of `t`,
    /// multiplied by `A_T`. Indexed by offset in the element's lattice box.
    fn interpolant_action(&self, j: usize, t: usize) -> Option<(LatticeBox, Vec<S>)> {
        let row = self.interp.kappa().row(j);
        let mesh = &self.space.mesh;
        let (ix, iy) = mesh.element_coords(t);
        let lat = self.fe.lattice;
        let s = lat.per_coarse();
        let bx = lat.closure(&ElementBox::single(ix, iy));
        let mut w = vec![S::zero(); bx.len()];
        let mut any = false;
        for &(z, k) in row {
            let (zx, zy) = mesh.node_coords(z);
            if zx < ix || zx > ix + 1 || zy < iy || zy > iy + 1 {
                continue;
            }
            any = true;
            for (a, b) in bx.points() {
                let tx = 1.0 - (a as f64 - (zx * s) as f64).abs() / s as f64;
                let ty = 1.0 - (b as f64 - (zy * s) as f64).abs() / s as f64;
                w[bx.offset(a, b)] += S::from_f64(k * tx * ty);
            }
        }
        if !any {
            return None;
        }
        let r = self.fe.refinement.ratio;
        let mut y = vec![S::zero(); bx.len()];
        self.form.apply_block(
            (ix * r, (ix + 1) * r, iy * r, (iy + 1) * r),
            &bx,
            &w,
            &mut y,
        );
        Some((bx, y))
    }
}

/// Whether `t` and `k` share a vertex carrying a hat of `I_H`.
fn shares_hat_vertex(mesh: &grid::CartesianMesh, t: usize, k: usize, boundary_nodes: bool) -> bool {
    let (tx, ty) = mesh.element_coords(t);
    let (kx, ky) = mesh.element_coords(k);
    for vy in ky..=ky + 1 {
        for vx in kx..=kx + 1 {
            let on_t = (tx..=tx + 1).contains(&vx) && (ty..=ty + 1).contains(&vy);
            if on_t && (boundary_nodes || !mesh.is_boundary_node(vx, vy)) {
                return true;
            }
        }
    }
    false
}

/// Factorized saddle problem on one patch.
pub struct LocalProblem<S: Scalar> {
    pub patch: Patch,
    /// Fine lattice indices of `V_T^ℓ`, ascending.
    pub dofs: Vec<usize>,
    /// Constraint indices of `M_T^ℓ`, ascending.
    pub constraints: Vec<usize>,
    closure: LatticeBox,
    /// Local dof index per closure offset, `u32::MAX` when absent.
    position: Vec<u32>,
    factor: KktFactorization<S>,
}

/// One solved corrector with its multiplier, both in local numbering.
#[derive(Clone, Debug)]
pub struct Corrector<S> {
    pub j: usize,
    pub psi: Vec<S>,
    pub lambda: Vec<S>,
}

/// Sets up and factorizes the local problem on `N^ℓ(T)`.
pub fn build_local_problem<S: Scalar>(
    ctx: &LodContext<S>,
    t: usize,
    ell: usize,
) -> Result<LocalProblem<S>> {
    if ell == 0 {
        return Err(invalid("oversampling order must be at least one"));
    }
    let mesh = &ctx.space.mesh;
    if t >= mesh.element_count() {
        return Err(invalid(format!("element {t} is not part of the mesh")));
    }
    let bx = ctx.patch_box(t, ell);
    local_problem_on_box(ctx, bx)
}

fn local_problem_on_box<S: Scalar>(ctx: &LodContext<S>, bx: ElementBox) -> Result<LocalProblem<S>> {
    let mesh = &ctx.space.mesh;
    let patch = Patch::from_box(mesh, bx);
    let dofs = grid::fine_dofs_in_patch_with(&ctx.fe.refinement, &patch, ctx.fe.q, ctx.trace);
    let constraints = ctx.space.restrict_to_patch(&patch);
    let a = ctx.matrix.submatrix(&dofs, &dofs);
    let b = ctx.b.submatrix(&constraints, &dofs);
    let factor = KktFactorization::new(&a, &b)?;
    let lat = ctx.fe.lattice;
    let closure = lat.closure(&bx);
    let mut position = vec![u32::MAX; closure.len()];
    for (i, &d) in dofs.iter().enumerate() {
        let (a, b) = lat.coords(d);
        position[closure.offset(a, b)] = i as u32;
    }
    Ok(LocalProblem {
        patch,
        dofs,
        constraints,
        closure,
        position,
        factor,
    })
}

impl<S: Scalar> LocalProblem<S> {
    pub fn closure(&self) -> LatticeBox {
        self.closure
    }

    /// Right-hand side pair `(f, g)` of the corrector problem for `(j, t)`.
    pub fn rhs(&self, ctx: &LodContext<S>, j: usize, t: usize) -> (Vec<S>, Vec<S>) {
        let mut f = vec![S::zero(); self.dofs.len()];
        if let Some((bx, y)) = ctx.interpolant_action(j, t) {
            for ((a, b), &v) in bx.points().zip(&y) {
                let p = self.position[self.closure.offset(a, b)];
                if p != u32::MAX {
                    f[p as usize] = v;
                }
            }
        }
        let mut g = vec![S::zero(); self.constraints.len()];
        let mesh = &ctx.space.mesh;
        let (ix, iy) = mesh.element_coords(t);
        let row = ctx.interp.kappa().row(j);
        for k in ctx.space.functions_on_element(ix, iy) {
            let Ok(pos) = self.constraints.binary_search(&k) else {
                continue;
            };
            let mut v = 0.0;
            for &(z, kappa) in row {
                let (zx, zy) = mesh.node_coords(z);
                if (ix..=ix + 1).contains(&zx) && (iy..=iy + 1).contains(&zy) {
                    v += kappa * ctx.space.hat_moment(k, ix, iy, (zx - ix, zy - iy));
                }
            }
            if k == j {
                v -= ctx.weight(j, t);
            }
            g[pos] = S::from_f64(v);
        }
        // A functional with j outside the local set still carries its weight
        // through the g_j entry above only when j ∈ M_T^ℓ; T ∈ ω_j guarantees it.
        (f, g)
    }

    /// Solves the correctors of the basis indices `js` on element `t`.
    pub fn solve(&self, ctx: &LodContext<S>, t: usize, js: &[usize]) -> Result<Vec<Corrector<S>>> {
        let rhs: Vec<(Vec<S>, Vec<S>)> = js.iter().map(|&j| self.rhs(ctx, j, t)).collect();
        let fs: Vec<&[S]> = rhs.iter().map(|(f, _)| f.as_slice()).collect();
        let gs: Vec<&[S]> = rhs.iter().map(|(_, g)| g.as_slice()).collect();
        let sol = self.factor.solve_many(&fs, &gs)?;
        Ok(js
            .iter()
            .zip(sol)
            .map(|(&j, (psi, lambda))| Corrector { j, psi, lambda })
            .collect())
    }

    /// Scatters a local vector onto the closure box of the patch.
    pub fn scatter(&self, local: &[S], out: &mut [S]) {
        debug_assert_eq!(out.len(), self.closure.len());
        for (off, &p) in self.position.iter().enumerate() {
            if p != u32::MAX {
                out[off] += local[p as usize];
            }
        }
    }
}

/// Solves the correctors `ψ_{j,T}` for every `j` in `js`.
pub fn solve_element_correctors<S: Scalar>(
    ctx: &LodContext<S>,
    lp: &LocalProblem<S>,
    t: usize,
    js: &[usize],
) -> Result<Vec<Corrector<S>>> {
    lp.solve(ctx, t, js)
}

/// Partial sums `Σ_{T ∈ group} ψ_{j,T}` over one patch closure.
type GroupResult<S> = (LatticeBox, Vec<(usize, Vec<S>)>);

/// Assembles the localized basis `{φ_j^ℓ}`. `ell ≥ n` yields global patches.
pub fn assemble_basis<S: Scalar>(
    ctx: &LodContext<S>,
    ell: usize,
    par: Parallelism,
) -> Result<LodBasis<S>> {
    if ell == 0 {
        return Err(invalid("oversampling order must be at least one"));
    }
    let mesh = &ctx.space.mesh;
    let n = mesh.n;
    let ell = ell.min(n);
    let nel = mesh.element_count();

    // Patch groups in order of first appearance.
    let mut groups: Vec<(ElementBox, Vec<usize>)> = Vec::new();
    let mut index: BTreeMap<ElementBox, usize> = BTreeMap::new();
    for t in 0..nel {
        let bx = ctx.patch_box(t, ell);
        match index.get(&bx) {
            Some(&g) => groups[g].1.push(t),
            None => {
                index.insert(bx, groups.len());
                groups.push((bx, vec![t]));
            }
        }
    }

    let lat = ctx.fe.lattice;
    let jn = ctx.space.len();
    let mut elements: Vec<Option<ElementBox>> = vec![None; jn];
    for t in 0..nel {
        let bx = ctx.patch_box(t, ell);
        for j in ctx.correctors_on(t) {
            elements[j] = Some(elements[j].map_or(bx, |e| e.union(&bx)));
        }
    }
    let mut functions: Vec<Option<BasisFunction<S>>> = (0..jn).map(|_| None).collect();

    let chunk = 16;
    for batch in groups.chunks(chunk) {
        let results: Vec<GroupResult<S>> =
            par::try_map(par, batch, |(bx, ts)| solve_group(ctx, *bx, ts))?;
        for (closure, partials) in results {
            for (j, partial) in partials {
                let el = elements[j].expect("every corrector index has a sparsity set");
                let support = lat.closure(&el);
                let slot = &mut functions[j];
                if slot.is_none() && support == closure {
                    let mut values = partial;
                    for v in &mut values {
                        *v = -*v;
                    }
                    *slot = Some(BasisFunction {
                        elements: el,
                        support,
                        values,
                    });
                    continue;
                }
                let f = slot.get_or_insert_with(|| BasisFunction {
                    elements: el,
                    support,
                    values: vec![S::zero(); support.len()],
                });
                subtract_box(f, &closure, &partial);
            }
        }
    }

    let s = lat.per_coarse();
    let mut out = Vec::with_capacity(jn);
    for (j, f) in functions.into_iter().enumerate() {
        let mut f =
            f.ok_or_else(|| invalid(format!("basis function {j} received no corrector")))?;
        for &(z, k) in ctx.interp.kappa().row(j) {
            let (zx, zy) = mesh.node_coords(z);
            let omega = mesh.elements_around_node(zx, zy);
            for (a, b) in lat.closure(&omega).points() {
                let tx = 1.0 - (a as f64 - (zx * s) as f64).abs() / s as f64;
                let ty = 1.0 - (b as f64 - (zy * s) as f64).abs() / s as f64;
                let o = f.support.offset(a, b);
                f.values[o] += S::from_f64(k * tx * ty);
            }
        }
        out.push(f);
    }
    Ok(LodBasis {
        mode: ctx.space.mode,
        p: ctx.space.p,
        ell,
        lattice: lat,
        functions: out,
    })
}

fn solve_group<S: Scalar>(
    ctx: &LodContext<S>,
    bx: ElementBox,
    ts: &[usize],
) -> Result<GroupResult<S>> {
    let lp = local_problem_on_box(ctx, bx)?;
    let mut acc: BTreeMap<usize, Vec<S>> = BTreeMap::new();
    for &t in ts {
        let js = ctx.correctors_on(t);
        for c in lp.solve(ctx, t, &js)? {
            let slot = acc
                .entry(c.j)
                .or_insert_with(|| vec![S::zero(); lp.closure.len()]);
            lp.scatter(&c.psi, slot);
        }
    }
    Ok((lp.closure, acc.into_iter().collect()))
}

fn subtract_box<S: Scalar>(f: &mut BasisFunction<S>, bx: &LatticeBox, vals: &[S]) {
    let w = bx.width();
    for (row, b) in (bx.b0..=bx.b1).enumerate() {
        let start = f.support.offset(bx.a0, b);
        for (o, &v) in f.values[start..start + w]
            .iter_mut()
            .zip(&vals[row * w..(row + 1) * w])
        {
            *o -= v;
        }
    }
}

/// The local form `c_T(v, μ) = Σ_j |T∩ω_j|/|ω_j| μ_j q_j(v) - ∫_T μ I_H v`
/// for `μ = Σ_j μ_j Λ_j`.
pub fn c_t<S: Scalar>(ctx: &LodContext<S>, t: usize, v: &[S], mu: &[S]) -> S {
    let mesh = &ctx.space.mesh;
    let (ix, iy) = mesh.element_coords(t);
    let q = crate::constraints::qoi(&ctx.b, v);
    let nodal = ctx.interp.nodal_values(&q);
    let mut first = S::zero();
    let mut second = S::zero();
    for k in ctx.space.functions_on_element(ix, iy) {
        first += mu[k] * q[k].scale(ctx.space.support_weight(k, ix, iy));
        for cy in 0..2 {
            for cx in 0..2 {
                let z = mesh.node(ix + cx, iy + cy);
                second += mu[k] * nodal[z].scale(ctx.space.hat_moment(k, ix, iy, (cx, cy)));
            }
        }
    }
    first - second
}
