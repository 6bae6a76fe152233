//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use lod_core::constraints::{build_space, Mode};
use lod_core::corrector::LodContext;
use lod_core::fem::{BoundaryCondition, CoefficientField, FeSpace, FineForm};
use lod_core::grid::{build_mesh, refine, Domain, TraceCondition};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Elliptic context on the unit square with `n` coarse cells per side and
/// refinement ratio `r`, fine degree 1.
pub fn context(n: usize, r: usize, p: usize, mode: Mode, a: &CoefficientField) -> LodContext<f64> {
    let mesh = build_mesh(Domain::unit_square(), n).unwrap();
    let fe = FeSpace::new(
        refine(&mesh, r).unwrap(),
        1,
        BoundaryCondition::DirichletZero,
    )
    .unwrap();
    let form = FineForm::diffusion(&fe, a).unwrap();
    let space = build_space(&mesh, p, mode).unwrap();
    LodContext::new(fe, space, form, TraceCondition::Vanishing).unwrap()
}

pub fn unit() -> CoefficientField {
    CoefficientField::constant(Domain::unit_square(), 1.0)
}

/// Random fine function, zero on the Dirichlet boundary.
pub fn random_fine(ctx: &LodContext<f64>, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut v = vec![0.0; ctx.fe.ndofs()];
    for &d in ctx.fe.free_dofs() {
        v[d] = rng.random_range(-1.0..1.0);
    }
    v
}

pub fn random_vec(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Solves `m x = rhs` for a dense symmetric positive definite `m` by
/// textbook Cholesky.
pub fn cholesky_solve(m: &[Vec<f64>], rhs: &[f64]) -> Vec<f64> {
    let n = m.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = m[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            if i == j {
                assert!(s > 0.0, "matrix is not positive definite");
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        y[i] = (rhs[i] - (0..i).map(|k| l[i][k] * y[k]).sum::<f64>()) / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        x[i] = (y[i] - (i + 1..n).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
    }
    x
}

/// Euclidean projection of `v` onto the fine-scale space `W` (free dofs with
/// vanishing quantities of interest): `w = v − Bᵀ (B Bᵀ)⁻¹ B v`.
pub struct KernelProjector {
    free: Vec<usize>,
    rows: Vec<Vec<(usize, f64)>>,
    gram: Vec<Vec<f64>>,
}

impl KernelProjector {
    pub fn new(ctx: &LodContext<f64>) -> Self {
        let free = ctx.fe.free_dofs().to_vec();
        let rows: Vec<Vec<(usize, f64)>> = (0..ctx.b.nrows())
            .map(|j| {
                let (cols, vals) = ctx.b.row(j);
                cols.iter()
                    .zip(vals)
                    .map(|(&c, &v)| (c as usize, v))
                    .filter(|&(c, _)| ctx.fe.free_position(c).is_some())
                    .collect()
            })
            .collect();
        let n = rows.len();
        let mut dense = vec![0.0; ctx.fe.ndofs()];
        let mut gram = vec![vec![0.0; n]; n];
        for i in 0..n {
            for &(c, v) in &rows[i] {
                dense[c] = v;
            }
            for j in 0..n {
                gram[i][j] = rows[j].iter().map(|&(c, v)| v * dense[c]).sum();
            }
            for &(c, _) in &rows[i] {
                dense[c] = 0.0;
            }
        }
        Self { free, rows, gram }
    }

    pub fn qoi(&self, v: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&(c, b)| b * v[c]).sum())
            .collect()
    }

    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let mut w = vec![0.0; v.len()];
        for &d in &self.free {
            w[d] = v[d];
        }
        let lambda = cholesky_solve(&self.gram, &self.qoi(&w));
        for (r, l) in self.rows.iter().zip(lambda) {
            for &(c, b) in r {
                w[c] -= l * b;
            }
        }
        w
    }
}

/// `a(u, v)` with the context's assembled form.
pub fn energy_product(ctx: &LodContext<f64>, u: &[f64], v: &[f64]) -> f64 {
    dot(&ctx.matrix.mul_vec(u), v)
}
