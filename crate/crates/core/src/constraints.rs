//! Constraint spaces `M_H` of degree `p` and their coupling to the fine space.
//!
//! DG: `J = n² (p+1)²`, index `j = e (p+1)² + β (p+1) + α` for the mode
//! `L_α(ξ) L_β(η) / H` on element `e`.
//! CG: `J = (pn+1)²`, index `j = b (pn+1) + a` for the equispaced node
//! `(a, b)`; functions at coarse vertices are the bilinear hats.

use crate::error::{invalid, Result};
use crate::fem::FeSpace;
use crate::grid::{CartesianMesh, ElementBox, Patch};
use crate::linalg::{assemble, SparseMatrix};
use crate::quadrature::{legendre_orthonormal, GaussRule, LagrangeBasis};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Cg,
    Dg,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Cg => "cg",
            Mode::Dg => "dg",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cg" => Ok(Mode::Cg),
            "dg" => Ok(Mode::Dg),
            other => Err(invalid(format!("unknown constraint mode '{other}'"))),
        }
    }
}

/// One-dimensional factor of a constraint function on a single element, in
/// the local coordinate `ξ ∈ [0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Factor1D {
    Legendre(usize),
    Lagrange(usize),
    /// `1 - ξ`
    HatLeft,
    /// `ξ`
    HatRight,
}

impl Factor1D {
    pub fn eval(self, p: usize, xi: f64) -> f64 {
        match self {
            Factor1D::Legendre(k) => legendre_orthonormal(k, xi)[k],
            Factor1D::Lagrange(i) => LagrangeBasis::new(p).value(i, xi),
            Factor1D::HatLeft => 1.0 - xi,
            Factor1D::HatRight => xi,
        }
    }

    fn slot(self, p: usize) -> usize {
        match self {
            Factor1D::Legendre(k) => k,
            Factor1D::Lagrange(i) => p + 1 + i,
            Factor1D::HatLeft => 2 * p + 2,
            Factor1D::HatRight => 2 * p + 3,
        }
    }
}

/// Restriction of `Λ_j` to one element: `scale · fx(ξ) · fy(η)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalFactors {
    pub fx: Factor1D,
    pub fy: Factor1D,
    pub scale: f64,
}

/// The space `M_H` with basis `{Λ_j}`.
#[derive(Clone, Debug)]
pub struct ConstraintSpace {
    pub mesh: CartesianMesh,
    pub p: usize,
    pub mode: Mode,
    /// `∫_0^1 f(ξ) (1 - ξ)` and `∫_0^1 f(ξ) ξ` per factor slot.
    hat_moments: Vec<[f64; 2]>,
}

/// Builds the constraint space of degree `p` on `mesh`.
pub fn build_space(mesh: &CartesianMesh, p: usize, mode: Mode) -> Result<ConstraintSpace> {
    if p == 0 {
        return Err(invalid("constraint degree must be at least one"));
    }
    let rule = GaussRule::new(p + 2);
    let hat_moments = all_factors(p)
        .map(|f| {
            [
                rule.integrate(|x| f.eval(p, x) * (1.0 - x)),
                rule.integrate(|x| f.eval(p, x) * x),
            ]
        })
        .collect();
    Ok(ConstraintSpace {
        mesh: mesh.clone(),
        p,
        mode,
        hat_moments,
    })
}

fn all_factors(p: usize) -> impl Iterator<Item = Factor1D> {
    (0..=p)
        .map(Factor1D::Legendre)
        .chain((0..=p).map(Factor1D::Lagrange))
        .chain([Factor1D::HatLeft, Factor1D::HatRight])
}

impl ConstraintSpace {
    /// Basis size `J`.
    pub fn len(&self) -> usize {
        let (n, p) = (self.mesh.n, self.p);
        match self.mode {
            Mode::Dg => n * n * (p + 1) * (p + 1),
            Mode::Cg => (p * n + 1) * (p * n + 1),
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn modes_per_element(&self) -> usize {
        (self.p + 1) * (self.p + 1)
    }

    /// Points per side of the CG node lattice.
    pub fn node_side(&self) -> usize {
        self.p * self.mesh.n + 1
    }

    pub fn dg_index(&self, e: usize, alpha: usize, beta: usize) -> usize {
        e * self.modes_per_element() + beta * (self.p + 1) + alpha
    }

    /// `(element, α, β)` of a DG index.
    pub fn dg_mode(&self, j: usize) -> (usize, usize, usize) {
        let k = self.modes_per_element();
        let r = j % k;
        (j / k, r % (self.p + 1), r / (self.p + 1))
    }

    pub fn cg_index(&self, a: usize, b: usize) -> usize {
        b * self.node_side() + a
    }

    pub fn cg_node(&self, j: usize) -> (usize, usize) {
        (j % self.node_side(), j / self.node_side())
    }

    /// Coarse vertex `(ix, iy)` if `Λ_j` is the bilinear hat of that vertex.
    pub fn vertex_of(&self, j: usize) -> Option<(usize, usize)> {
        match self.mode {
            Mode::Dg => None,
            Mode::Cg => {
                let (a, b) = self.cg_node(j);
                (a % self.p == 0 && b % self.p == 0).then_some((a / self.p, b / self.p))
            }
        }
    }

    /// Whether `Λ_j` is the constant mode of a DG element.
    pub fn is_constant_mode(&self, j: usize) -> bool {
        self.mode == Mode::Dg && j.is_multiple_of(self.modes_per_element())
    }

    fn node_range(&self, a: usize) -> (usize, usize) {
        let p = self.p;
        if a.is_multiple_of(p) {
            let k = a / p;
            (k.saturating_sub(1), k.min(self.mesh.n - 1))
        } else {
            (a / p, a / p)
        }
    }

    /// Support `ω_j` as an element rectangle.
    pub fn support(&self, j: usize) -> ElementBox {
        match self.mode {
            Mode::Dg => {
                let (e, _, _) = self.dg_mode(j);
                let (ix, iy) = self.mesh.element_coords(e);
                ElementBox::single(ix, iy)
            }
            Mode::Cg => {
                let (a, b) = self.cg_node(j);
                let (x0, x1) = self.node_range(a);
                let (y0, y1) = self.node_range(b);
                ElementBox { x0, x1, y0, y1 }
            }
        }
    }

    /// `|T ∩ ω_j| / |ω_j|` on the uniform mesh.
    pub fn support_weight(&self, j: usize, ix: usize, iy: usize) -> f64 {
        let s = self.support(j);
        if s.contains(ix, iy) {
            1.0 / s.count() as f64
        } else {
            0.0
        }
    }

    /// Restriction of `Λ_j` to element `(ix, iy)`, or `None` outside `ω_j`.
    pub fn on_element(&self, j: usize, ix: usize, iy: usize) -> Option<LocalFactors> {
        match self.mode {
            Mode::Dg => {
                let (e, alpha, beta) = self.dg_mode(j);
                (e == self.mesh.element(ix, iy)).then(|| LocalFactors {
                    fx: Factor1D::Legendre(alpha),
                    fy: Factor1D::Legendre(beta),
                    scale: 1.0 / self.mesh.h,
                })
            }
            Mode::Cg => {
                if !self.support(j).contains(ix, iy) {
                    return None;
                }
                let p = self.p;
                let (a, b) = self.cg_node(j);
                let (la, lb) = (a - p * ix, b - p * iy);
                let (fx, fy) = if self.vertex_of(j).is_some() {
                    let h = |l: usize| {
                        if l == 0 {
                            Factor1D::HatLeft
                        } else {
                            Factor1D::HatRight
                        }
                    };
                    (h(la), h(lb))
                } else {
                    (Factor1D::Lagrange(la), Factor1D::Lagrange(lb))
                };
                Some(LocalFactors { fx, fy, scale: 1.0 })
            }
        }
    }

    /// All `j` with `(ix, iy) ∈ ω_j`, ascending.
    pub fn functions_on_element(&self, ix: usize, iy: usize) -> Vec<usize> {
        match self.mode {
            Mode::Dg => {
                let e = self.mesh.element(ix, iy);
                let k = self.modes_per_element();
                (e * k..(e + 1) * k).collect()
            }
            Mode::Cg => {
                let p = self.p;
                let mut out = Vec::with_capacity((p + 1) * (p + 1));
                for b in iy * p..=(iy + 1) * p {
                    for a in ix * p..=(ix + 1) * p {
                        out.push(self.cg_index(a, b));
                    }
                }
                out
            }
        }
    }

    /// `Λ_j(x, y)` at a physical point (the value from the lowest-index
    /// element containing the point).
    pub fn evaluate(&self, j: usize, x: f64, y: f64) -> f64 {
        let m = &self.mesh;
        let (u, v) = (
            (x - m.domain.origin[0]) / m.h,
            (y - m.domain.origin[1]) / m.h,
        );
        let ix = (u.floor().max(0.0) as usize).min(m.n - 1);
        let iy = (v.floor().max(0.0) as usize).min(m.n - 1);
        // Points on element edges belong to several elements; continuity (CG)
        // or the convention above (DG) makes any choice consistent.
        match self.on_element(j, ix, iy) {
            Some(f) => {
                f.scale * f.fx.eval(self.p, u - ix as f64) * f.fy.eval(self.p, v - iy as f64)
            }
            None => {
                let b = self.support(j);
                let (cx, cy) = (ix.clamp(b.x0, b.x1), iy.clamp(b.y0, b.y1));
                let (lu, lv) = (u - cx as f64, v - cy as f64);
                if (0.0..=1.0).contains(&lu) && (0.0..=1.0).contains(&lv) {
                    let f = self
                        .on_element(j, cx, cy)
                        .expect("clamped element lies in the support");
                    f.scale * f.fx.eval(self.p, lu) * f.fy.eval(self.p, lv)
                } else {
                    0.0
                }
            }
        }
    }

    /// `∫_T Λ_j Λ¹_c` for the bilinear hat of corner `c = (cx, cy) ∈ {0,1}²`
    /// of element `T = (ix, iy)`.
    pub fn hat_moment(&self, j: usize, ix: usize, iy: usize, corner: (usize, usize)) -> f64 {
        match self.on_element(j, ix, iy) {
            None => 0.0,
            Some(f) => {
                let h = self.mesh.h;
                f.scale
                    * h
                    * h
                    * self.hat_moments[f.fx.slot(self.p)][corner.0]
                    * self.hat_moments[f.fy.slot(self.p)][corner.1]
            }
        }
    }

    /// Local constraint set `M_T^ℓ` of a patch, ascending.
    ///
    /// DG: every mode of every patch element. CG: every node in the closed
    /// patch; functions are truncated to the patch.
    pub fn restrict_to_patch(&self, patch: &Patch) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::new();
        for &e in &patch.elements {
            let (ix, iy) = self.mesh.element_coords(e);
            out.extend(self.functions_on_element(ix, iy));
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Coupling matrix `B[j, k] = (Λ_j, φ_k)_Ω` over all fine dofs.
///
/// Integrals are exact: `Λ_j` and the fine basis are tensor products on every
/// coarse element, and each 1D factor integral uses `p + q + 1` Gauss points
/// per fine cell.
pub fn assemble_b(space: &ConstraintSpace, fe: &FeSpace) -> Result<SparseMatrix<f64>> {
    if fe.refinement.coarse != space.mesh {
        return Err(invalid(
            "fine space is not a refinement of the constraint mesh",
        ));
    }
    let (p, q, r) = (space.p, fe.q, fe.refinement.ratio);
    let s = q * r;
    let rule = GaussRule::new(p + q + 1);
    let lag = LagrangeBasis::new(q);
    // table[slot][a] = ∫_0^1 φ̂_a(ξ) f(ξ) dξ for fine 1D basis function a.
    let table: Vec<Vec<f64>> = all_factors(p)
        .map(|f| {
            let mut row = vec![0.0; s + 1];
            for c in 0..r {
                for (&x, &w) in rule.points.iter().zip(&rule.weights) {
                    let xi = (c as f64 + x) / r as f64;
                    let fv = f.eval(p, xi) * w / r as f64;
                    for (t, lv) in lag.values(x).into_iter().enumerate() {
                        row[c * q + t] += lv * fv;
                    }
                }
            }
            row
        })
        .collect();
    let lat = fe.lattice;
    let h = space.mesh.h;
    let mut trip = Vec::new();
    for j in 0..space.len() {
        let sup = space.support(j);
        for iy in sup.y0..=sup.y1 {
            for ix in sup.x0..=sup.x1 {
                let f = space
                    .on_element(j, ix, iy)
                    .expect("element lies in the support");
                let tx = &table[f.fx.slot(p)];
                let ty = &table[f.fy.slot(p)];
                let c = f.scale * h * h;
                for (b, &vy) in ty.iter().enumerate() {
                    for (a, &vx) in tx.iter().enumerate() {
                        let v = c * vx * vy;
                        if v != 0.0 {
                            trip.push((j, lat.index(ix * s + a, iy * s + b), v));
                        }
                    }
                }
            }
        }
    }
    assemble(space.len(), lat.len(), &trip)
}

/// Quantities of interest `q_j(v) = ∫ v Λ_j`.
pub fn qoi<S: crate::linalg::Scalar>(b: &SparseMatrix<f64>, v: &[S]) -> Vec<S> {
    b.map(S::from_f64).mul_vec(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::BoundaryCondition;
    use crate::grid::{build_mesh, patch, refine, Domain};

    fn mesh(n: usize) -> CartesianMesh {
        build_mesh(Domain::unit_square(), n).unwrap()
    }

    #[test]
    fn basis_sizes() {
        assert_eq!(build_space(&mesh(2), 1, Mode::Dg).unwrap().len(), 16);
        assert_eq!(build_space(&mesh(2), 2, Mode::Cg).unwrap().len(), 25);
        assert!(build_space(&mesh(2), 0, Mode::Cg).is_err());
    }

    #[test]
    fn qoi_of_constant_function() {
        let m = mesh(4);
        let fe = FeSpace::new(refine(&m, 2).unwrap(), 1, BoundaryCondition::Natural).unwrap();
        let ones = vec![1.0; fe.ndofs()];
        let dg = build_space(&m, 2, Mode::Dg).unwrap();
        let q = qoi(&assemble_b(&dg, &fe).unwrap(), &ones);
        for (j, v) in q.iter().enumerate() {
            let expect = if dg.is_constant_mode(j) { m.h } else { 0.0 };
            assert!((v - expect).abs() < 1e-14, "j={j}: {v}");
        }
        let cg = build_space(&m, 1, Mode::Cg).unwrap();
        let q = qoi(&assemble_b(&cg, &fe).unwrap(), &ones);
        let z = cg.cg_index(2, 2);
        assert!((q[z] - m.h * m.h).abs() < 1e-15);
    }

    #[test]
    fn restriction_counts() {
        let m = mesh(8);
        let pt = patch(&m, &[m.element(3, 3)], 1).unwrap();
        assert_eq!(
            build_space(&m, 1, Mode::Dg)
                .unwrap()
                .restrict_to_patch(&pt)
                .len(),
            36
        );
        assert_eq!(
            build_space(&m, 1, Mode::Cg)
                .unwrap()
                .restrict_to_patch(&pt)
                .len(),
            16
        );
        let all = Patch::from_box(&m, m.full_box());
        let cg2 = build_space(&m, 2, Mode::Cg).unwrap();
        assert_eq!(
            cg2.restrict_to_patch(&all),
            (0..cg2.len()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn cg_vertex_functions_are_hats() {
        let m = mesh(2);
        let cg = build_space(&m, 2, Mode::Cg).unwrap();
        let z = cg.cg_index(2, 2);
        assert_eq!(cg.vertex_of(z), Some((1, 1)));
        // Hat of the centre vertex at an edge midpoint and an element centre.
        assert!((cg.evaluate(z, 0.25, 0.5) - 0.5).abs() < 1e-15);
        assert!((cg.evaluate(z, 0.25, 0.25) - 0.25).abs() < 1e-15);
        let edge = cg.cg_index(1, 2);
        assert_eq!(cg.vertex_of(edge), None);
        assert!((cg.evaluate(edge, 0.25, 0.5) - 1.0).abs() < 1e-14);
        assert!(cg.evaluate(edge, 0.5, 0.5).abs() < 1e-14);
    }

    #[test]
    fn hat_moments_match_quadrature() {
        let m = mesh(3);
        for mode in [Mode::Cg, Mode::Dg] {
            let sp = build_space(&m, 2, mode).unwrap();
            let rule = GaussRule::new(5);
            for j in sp.functions_on_element(1, 1) {
                for corner in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    let mut v = 0.0;
                    for (&x, &wx) in rule.points.iter().zip(&rule.weights) {
                        for (&y, &wy) in rule.points.iter().zip(&rule.weights) {
                            let hx = if corner.0 == 0 { 1.0 - x } else { x };
                            let hy = if corner.1 == 0 { 1.0 - y } else { y };
                            let px = (1.0 + x) * m.h;
                            let py = (1.0 + y) * m.h;
                            v += wx * wy * m.h * m.h * sp.evaluate(j, px, py) * hx * hy;
                        }
                    }
                    assert!((v - sp.hat_moment(j, 1, 1, corner)).abs() < 1e-13);
                }
            }
        }
    }
}
