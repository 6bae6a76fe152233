//! Experiment runner: convergence in `H`, decay in `ℓ`, CSV output and fits.
//!
//! Cells run sequentially; parallelism lives inside each cell. Records carry
//! no timing, so a rerun of the same configuration reproduces the CSV
//! bitwise. Wall-clock times go to a separate file.

pub mod config;
pub mod fit;
pub mod record;
pub mod run;

pub use config::{CoeffSpec, Ell, ExperimentConfig, ProblemKind};
pub use fit::{decay_factor, fit_eoc, log_slope, Eoc, SOLVER_FLOOR};
pub use record::{
    decay_lines, eoc_lines, write_gnuplot, write_timing, ExperimentRecord, FitLine, Metrics,
    RecordWriter, COLUMNS,
};
pub use run::Runner;

use crate::error::{invalid, Result};
use crate::par::Parallelism;
use crate::problems::Source;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Study {
    /// Fitted order in `H` per `ℓ`.
    Convergence,
    /// Fitted decay factor in `ℓ` per `H`.
    Decay,
}

#[derive(Clone, Debug)]
pub struct StudyOutput {
    pub records: Vec<ExperimentRecord>,
    pub fits: Vec<FitLine>,
}

impl StudyOutput {
    pub fn failed(&self) -> usize {
        self.records.iter().filter(|r| r.failure.is_some()).count()
    }
}

/// Runs every cell, handing each record to `sink` as soon as it exists.
pub fn run_study(
    cfg: &ExperimentConfig,
    study: Study,
    par: Parallelism,
    sink: &mut dyn FnMut(&ExperimentRecord) -> Result<()>,
) -> Result<StudyOutput> {
    if study == Study::Decay && cfg.problem == ProblemKind::Elliptic && cfg.source != Source::F2 {
        return Err(invalid(format!(
            "decay studies need a source in the constraint space (f2), got {}",
            cfg.source
        )));
    }
    let mut runner = Runner::new(cfg.clone(), par)?;
    let mut records = Vec::new();
    for (h, ell) in runner.cells() {
        let rec = runner.run_cell(h, ell);
        sink(&rec)?;
        records.push(rec);
    }
    let fits = match study {
        Study::Convergence => eoc_lines(cfg, &records),
        Study::Decay => decay_lines(cfg, &records),
    };
    Ok(StudyOutput { records, fits })
}

/// Convergence study without streaming.
pub fn run_convergence(cfg: &ExperimentConfig, par: Parallelism) -> Result<StudyOutput> {
    run_study(cfg, Study::Convergence, par, &mut |_| Ok(()))
}

/// Decay study without streaming.
pub fn run_decay(cfg: &ExperimentConfig, par: Parallelism) -> Result<StudyOutput> {
    run_study(cfg, Study::Decay, par, &mut |_| Ok(()))
}
