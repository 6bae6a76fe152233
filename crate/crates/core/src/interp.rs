//! Quasi-interpolation `I_H : V → V_H` into continuous bilinears vanishing
//! on `∂Ω`.
//!
//! `I_H v` depends on `v` only through its quantities of interest:
//! `(I_H v)(z) = Σ_j κ_zj q_j(v)` for interior coarse nodes `z`.
//! CG uses the hat-weighted average, DG the area-weighted mean of element
//! averages over `ω_z`.

use crate::constraints::{ConstraintSpace, Mode};
use crate::fem::FeSpace;
use crate::grid::CartesianMesh;
use crate::linalg::{Scalar, SparseMatrix};

/// Sparse table `κ_zj` stored by `j`. Nodes are coarse node indices.
#[derive(Clone, Debug, PartialEq)]
pub struct KappaTable {
    rows: Vec<Vec<(usize, f64)>>,
}

impl KappaTable {
    /// Non-zero `(z, κ_zj)` for basis index `j`, ascending in `z`.
    pub fn row(&self, j: usize) -> &[(usize, f64)] {
        &self.rows[j]
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn value(&self, j: usize, z: usize) -> f64 {
        self.rows[j]
            .iter()
            .find(|&&(n, _)| n == z)
            .map_or(0.0, |&(_, v)| v)
    }
}

#[derive(Clone, Debug)]
pub struct QuasiInterpolator {
    pub mode: Mode,
    pub mesh: CartesianMesh,
    kappa: KappaTable,
    /// Whether the hats of boundary nodes are part of the image.
    pub boundary_nodes: bool,
}

/// Builds `I_H` for the given constraint space.
pub fn build_interpolator(space: &ConstraintSpace) -> QuasiInterpolator {
    build_interpolator_with(space, false)
}

/// Builds `I_H`; with `boundary_nodes` the image also contains the hats of
/// the nodes on `∂Ω`.
pub fn build_interpolator_with(space: &ConstraintSpace, boundary_nodes: bool) -> QuasiInterpolator {
    let mesh = &space.mesh;
    let n = mesh.n;
    let mut rows = vec![Vec::new(); space.len()];
    let range = if boundary_nodes { 0..n + 1 } else { 1..n };
    for iy in range.clone() {
        for ix in range.clone() {
            let z = mesh.node(ix, iy);
            let b = mesh.elements_around_node(ix, iy);
            let area = b.count() as f64 * mesh.h * mesh.h;
            match space.mode {
                Mode::Cg => {
                    let j = space.cg_index(ix * space.p, iy * space.p);
                    // ∫_{ω_z} Λ_z¹ = |ω_z| / 4.
                    rows[j].push((z, 4.0 / area));
                }
                Mode::Dg => {
                    for e in b.elements(n) {
                        // ∫_T v = |T|^{1/2} q_{(T,0)}(v).
                        rows[space.dg_index(e, 0, 0)].push((z, mesh.h / area));
                    }
                }
            }
        }
    }
    for r in &mut rows {
        r.sort_by_key(|&(z, _)| z);
    }
    QuasiInterpolator {
        mode: space.mode,
        mesh: mesh.clone(),
        kappa: KappaTable { rows },
        boundary_nodes,
    }
}

impl QuasiInterpolator {
    pub fn kappa(&self) -> &KappaTable {
        &self.kappa
    }

    /// Coarse nodal values of `I_H v` from `q(v)`; boundary values are zero
    /// unless boundary nodes are included.
    pub fn nodal_values<S: Scalar>(&self, qoi: &[S]) -> Vec<S> {
        let mut out = vec![S::zero(); self.mesh.node_count()];
        for (j, &qj) in qoi.iter().enumerate() {
            for &(z, k) in self.kappa.row(j) {
                out[z] += qj.scale(k);
            }
        }
        out
    }

    /// Fine representation of `I_H v`.
    pub fn apply<S: Scalar>(&self, fe: &FeSpace, b: &SparseMatrix<f64>, v: &[S]) -> Vec<S> {
        let q = crate::constraints::qoi(b, v);
        prolongate_bilinear(fe, &self.nodal_values(&q))
    }
}

/// Evaluates the coarse bilinear function with the given nodal values at
/// every fine lattice point.
pub fn prolongate_bilinear<S: Scalar>(fe: &FeSpace, nodal: &[S]) -> Vec<S> {
    let lat = fe.lattice;
    let coarse = &fe.refinement.coarse;
    let s = lat.per_coarse();
    let side = lat.side();
    let mut out = vec![S::zero(); lat.len()];
    for b in 0..side {
        let (iy, ty) = split(b, s, coarse.n);
        for a in 0..side {
            let (ix, tx) = split(a, s, coarse.n);
            let v00 = nodal[coarse.node(ix, iy)];
            let v10 = nodal[coarse.node(ix + 1, iy)];
            let v01 = nodal[coarse.node(ix, iy + 1)];
            let v11 = nodal[coarse.node(ix + 1, iy + 1)];
            out[lat.index(a, b)] = v00.scale((1.0 - tx) * (1.0 - ty))
                + v10.scale(tx * (1.0 - ty))
                + v01.scale((1.0 - tx) * ty)
                + v11.scale(tx * ty);
        }
    }
    out
}

/// Element index and local coordinate of lattice coordinate `a`.
fn split(a: usize, s: usize, n: usize) -> (usize, f64) {
    let e = (a / s).min(n - 1);
    (e, (a - e * s) as f64 / s as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{assemble_b, build_space};
    use crate::fem::BoundaryCondition;
    use crate::grid::{build_mesh, refine, Domain};

    #[test]
    fn constants_are_reproduced_inside() {
        let m = build_mesh(Domain::unit_square(), 4).unwrap();
        let fe = FeSpace::new(refine(&m, 3).unwrap(), 2, BoundaryCondition::Natural).unwrap();
        for mode in [Mode::Cg, Mode::Dg] {
            for p in 1..=2 {
                let sp = build_space(&m, p, mode).unwrap();
                let b = assemble_b(&sp, &fe).unwrap();
                let ih = build_interpolator(&sp);
                let nodal = ih.nodal_values(&crate::constraints::qoi(&b, &vec![1.0; fe.ndofs()]));
                for iy in 0..=4 {
                    for ix in 0..=4 {
                        let v = nodal[m.node(ix, iy)];
                        let expect = if m.is_boundary_node(ix, iy) { 0.0 } else { 1.0 };
                        assert!(
                            (v - expect).abs() < 1e-13,
                            "{mode:?} p={p} ({ix},{iy}): {v}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn kappa_values() {
        let m = build_mesh(Domain::unit_square(), 8).unwrap();
        let h = m.h;
        let cg = build_interpolator(&build_space(&m, 1, Mode::Cg).unwrap());
        let sp = build_space(&m, 1, Mode::Cg).unwrap();
        let j = sp.cg_index(3, 4);
        assert_eq!(cg.kappa().row(j), &[(m.node(3, 4), 1.0 / (h * h))]);
        let dgs = build_space(&m, 2, Mode::Dg).unwrap();
        let dg = build_interpolator(&dgs);
        let e = m.element(3, 3);
        let row = dg.kappa().row(dgs.dg_index(e, 0, 0));
        assert_eq!(row.len(), 4);
        for &(_, k) in row {
            assert!((k - 1.0 / (4.0 * h)).abs() < 1e-12);
        }
        assert!(dg.kappa().row(dgs.dg_index(e, 1, 0)).is_empty());
    }

    #[test]
    fn boundary_values_vanish_exactly() {
        let m = build_mesh(Domain::unit_square(), 3).unwrap();
        let fe = FeSpace::new(refine(&m, 2).unwrap(), 1, BoundaryCondition::Natural).unwrap();
        let sp = build_space(&m, 1, Mode::Dg).unwrap();
        let b = assemble_b(&sp, &fe).unwrap();
        let v: Vec<f64> = (0..fe.ndofs())
            .map(|k| ((k * 37 % 11) as f64).sin())
            .collect();
        let out = build_interpolator(&sp).apply(&fe, &b, &v);
        let lat = fe.lattice;
        for k in 0..lat.len() {
            let (a, c) = lat.coords(k);
            if lat.is_boundary(a, c) {
                assert_eq!(out[k], 0.0);
            }
        }
    }
}
