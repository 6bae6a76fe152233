//! Experiment cells: one LOD solve per `(H, ℓ)` against a shared fine
//! reference.

use std::time::Instant;

use super::config::{Ell, ExperimentConfig, ProblemKind};
use super::record::{ExperimentRecord, Metrics};
use crate::constraints::build_space;
use crate::corrector::LodContext;
use crate::error::Result;
use crate::fem::{
    load_vector, solve_dirichlet, BoundaryCondition, CoefficientField, FeSpace, FineForm,
    NormOperators,
};
use crate::gpe::{
    build_gpe_basis, gpe_errors, ground_state, reference_ground_state, FlowParams, GpeOperators,
    GpeParams, GpeProblem, GroundState,
};
use crate::grid::{build_mesh, refine, TraceCondition};
use crate::helmholtz::{solve_helmholtz_lod, HelmholtzParams, HelmholtzProblem};
use crate::lodsolve::{errors, EllipticLod};
use crate::par::Parallelism;

/// Flow tolerance of the fine GPE reference.
pub const GPE_REFERENCE_TOL: f64 = 1e-13;

enum Reference {
    None,
    Elliptic {
        u: Vec<f64>,
        norms: NormOperators,
    },
    Gpe {
        ops: GpeOperators,
        gs: GroundState,
        norms: NormOperators,
    },
}

/// Runs cells in order, sharing the fine reference between them.
pub struct Runner {
    pub cfg: ExperimentConfig,
    pub par: Parallelism,
    field: CoefficientField,
    n_fine: usize,
    reference: Reference,
}

impl Runner {
    pub fn new(cfg: ExperimentConfig, par: Parallelism) -> Result<Self> {
        let field = cfg.coeff.build(cfg.seed)?;
        let n_fine = cfg.cells(cfg.fine_h)?;
        Ok(Self {
            cfg,
            par,
            field,
            n_fine,
            reference: Reference::None,
        })
    }

    /// Every `(H, ℓ)` cell, coarse to fine, `ℓ` in list order.
    pub fn cells(&self) -> Vec<(f64, Ell)> {
        self.cfg
            .coarse_h
            .iter()
            .flat_map(|&h| self.cfg.ell.iter().map(move |&l| (h, l)))
            .collect()
    }

    /// Runs one cell. Failures are recorded in the record, not returned.
    pub fn run_cell(&mut self, coarse_h: f64, ell: Ell) -> ExperimentRecord {
        let mut rec = ExperimentRecord::new(&self.cfg, coarse_h, ell);
        let start = Instant::now();
        if let Err(e) = self.solve_cell(&mut rec) {
            log::error!("cell H={coarse_h} ell={ell} failed: {e}");
            rec.metrics = Metrics::None;
            rec.failure = Some(e.to_string());
        }
        rec.wall_ms = start.elapsed().as_millis();
        rec
    }

    fn solve_cell(&mut self, rec: &mut ExperimentRecord) -> Result<()> {
        let n = self.cfg.cells(rec.coarse_h)?;
        let ell = rec.ell.resolve(n);
        let ratio = self.n_fine / n;
        match self.cfg.problem {
            ProblemKind::Elliptic => self.elliptic(rec, n, ratio, ell),
            ProblemKind::Helmholtz => self.helmholtz(rec, n, ratio, ell),
            ProblemKind::Gpe => self.gpe(rec, n, ratio, ell),
        }
    }

    fn elliptic(
        &mut self,
        rec: &mut ExperimentRecord,
        n: usize,
        ratio: usize,
        ell: usize,
    ) -> Result<()> {
        let mesh = build_mesh(self.field.domain, n)?;
        let fe = FeSpace::new(
            refine(&mesh, ratio)?,
            self.cfg.fine_q,
            BoundaryCondition::DirichletZero,
        )?;
        let source = self.cfg.source;
        let load = load_vector(&fe, |x, y| source.eval(x, y));
        if matches!(self.reference, Reference::None) {
            let norms = NormOperators::new(&fe, &self.field)?;
            let u = solve_dirichlet(&fe, &norms.stiffness, &load)?.values;
            self.reference = Reference::Elliptic { u, norms };
        }
        let Reference::Elliptic { u, norms } = &self.reference else {
            unreachable!("reference kind follows the problem kind")
        };
        rec.fine_dofs = fe.free_dofs().len();
        let form = FineForm::diffusion(&fe, &self.field)?;
        let space = build_space(&mesh, self.cfg.p, self.cfg.mode)?;
        let ctx = LodContext::new(fe, space, form, TraceCondition::Vanishing)?;
        let lod = EllipticLod::new(ctx, ell, self.par)?;
        rec.coarse_dofs = lod.basis.len();
        let sol = lod.solve(&load, self.par)?;
        let (energy_rel, l2_rel) = errors(&sol.fine.values, u, norms)?;
        rec.metrics = Metrics::Elliptic { energy_rel, l2_rel };
        Ok(())
    }

    fn helmholtz(
        &mut self,
        rec: &mut ExperimentRecord,
        n: usize,
        ratio: usize,
        ell: usize,
    ) -> Result<()> {
        let one = CoefficientField::constant(self.field.domain, 1.0);
        let prob = HelmholtzProblem::new(
            self.field.clone(),
            one,
            1.0,
            self.cfg.kappa,
            self.cfg.source,
        )?;
        let params = HelmholtzParams {
            n_coarse: n,
            ratio,
            q: self.cfg.fine_q,
            p: self.cfg.p,
            mode: self.cfg.mode,
            ell,
        };
        let r = solve_helmholtz_lod(&prob, params, self.par)?;
        rec.coarse_dofs = r.coarse_dofs;
        rec.fine_dofs = r.fine_dofs;
        rec.metrics = Metrics::Helmholtz {
            kappa_rel: r.err_kappa_rel,
        };
        Ok(())
    }

    fn gpe(
        &mut self,
        rec: &mut ExperimentRecord,
        n: usize,
        ratio: usize,
        ell: usize,
    ) -> Result<()> {
        let prob = GpeProblem::new(self.field.clone(), self.cfg.kappa_g)?;
        let params = GpeParams {
            n_coarse: n,
            ratio,
            q: self.cfg.fine_q,
            p: self.cfg.p,
            mode: self.cfg.mode,
            ell,
        };
        let lod = build_gpe_basis(&prob, params, self.par)?;
        if matches!(self.reference, Reference::None) {
            let ops = GpeOperators::new(&lod.ctx.fe, &prob)?;
            let flow = FlowParams {
                tol: GPE_REFERENCE_TOL,
                ..FlowParams::default()
            };
            let gs = reference_ground_state(&ops, flow)?;
            let one = CoefficientField::constant(prob.domain(), 1.0);
            let norms = NormOperators::new(&lod.ctx.fe, &one)?;
            self.reference = Reference::Gpe { ops, gs, norms };
        }
        let Reference::Gpe {
            ops,
            gs: reference,
            norms,
        } = &self.reference
        else {
            unreachable!("reference kind follows the problem kind")
        };
        rec.coarse_dofs = lod.basis.len();
        rec.fine_dofs = lod.ctx.fe.free_dofs().len();
        let gs = ground_state(&lod, ops, FlowParams::default())?;
        rec.metrics = Metrics::Gpe {
            energy: gs.energy,
            eigenvalue: gs.eigenvalue,
            errors: gpe_errors(&gs, reference, norms)?,
        };
        Ok(())
    }
}
