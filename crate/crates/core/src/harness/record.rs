//! Experiment records and their CSV layout.

use std::io::Write;

use super::config::{mode_name, Ell, ExperimentConfig, ProblemKind};
use super::fit::{decay_factor, fit_eoc, Eoc, SOLVER_FLOOR};
use crate::constraints::Mode;
use crate::error::{Error, Result};
use crate::gpe::GpeErrors;
use crate::problems::Source;

/// Column order of the record CSV.
pub const COLUMNS: [&str; 23] = [
    "problem",
    "mode",
    "p",
    "H",
    "ell",
    "h",
    "q",
    "coeff",
    "source",
    "seed",
    "coarse_dofs",
    "fine_dofs",
    "err_energy_rel",
    "err_l2_rel",
    "err_kappa_rel",
    "E",
    "lambda",
    "err_h1",
    "err_l2",
    "err_E",
    "err_lambda",
    "floor",
    "status",
];

/// Problem-specific results of one cell.
#[derive(Clone, Debug, PartialEq)]
pub enum Metrics {
    /// The cell failed before producing results.
    None,
    Elliptic {
        energy_rel: f64,
        l2_rel: f64,
    },
    Helmholtz {
        kappa_rel: f64,
    },
    Gpe {
        energy: f64,
        eigenvalue: f64,
        errors: GpeErrors,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentRecord {
    pub problem: ProblemKind,
    pub mode: Mode,
    pub p: usize,
    pub coarse_h: f64,
    pub ell: Ell,
    pub fine_h: f64,
    pub fine_q: usize,
    pub coeff: String,
    pub source: Source,
    pub seed: u64,
    pub coarse_dofs: usize,
    pub fine_dofs: usize,
    pub metrics: Metrics,
    pub wall_ms: u128,
    /// Error message of a failed cell.
    pub failure: Option<String>,
}

fn num(v: f64) -> String {
    format!("{v:.15e}")
}

impl ExperimentRecord {
    /// Record skeleton for one cell of `cfg`.
    pub fn new(cfg: &ExperimentConfig, coarse_h: f64, ell: Ell) -> Self {
        Self {
            problem: cfg.problem,
            mode: cfg.mode,
            p: cfg.p,
            coarse_h,
            ell,
            fine_h: cfg.fine_h,
            fine_q: cfg.fine_q,
            coeff: cfg.coeff.to_string(),
            source: cfg.source,
            seed: cfg.seed,
            coarse_dofs: 0,
            fine_dofs: 0,
            metrics: Metrics::None,
            wall_ms: 0,
            failure: None,
        }
    }

    /// Error the fits use: relative energy (elliptic), relative κ-norm
    /// (Helmholtz) or `‖∇(u − u_ref)‖` (GPE).
    pub fn primary_error(&self) -> Option<f64> {
        match self.metrics {
            Metrics::None => None,
            Metrics::Elliptic { energy_rel, .. } => Some(energy_rel),
            Metrics::Helmholtz { kappa_rel } => Some(kappa_rel),
            Metrics::Gpe { errors, .. } => Some(errors.h1),
        }
    }

    pub fn primary_name(&self) -> &'static str {
        match self.problem {
            ProblemKind::Elliptic => "err_energy_rel",
            ProblemKind::Helmholtz => "err_kappa_rel",
            ProblemKind::Gpe => "err_h1",
        }
    }

    pub fn at_floor(&self) -> bool {
        self.primary_error().is_some_and(|e| e <= SOLVER_FLOOR)
    }

    /// Fields in [`COLUMNS`] order.
    pub fn fields(&self) -> Vec<String> {
        let mut m = vec![String::new(); 9];
        match self.metrics {
            Metrics::None => {}
            Metrics::Elliptic { energy_rel, l2_rel } => {
                m[0] = num(energy_rel);
                m[1] = num(l2_rel);
            }
            Metrics::Helmholtz { kappa_rel } => m[2] = num(kappa_rel),
            Metrics::Gpe {
                energy,
                eigenvalue,
                errors,
            } => {
                m[3] = num(energy);
                m[4] = num(eigenvalue);
                m[5] = num(errors.h1);
                m[6] = num(errors.l2);
                m[7] = num(errors.energy);
                m[8] = num(errors.eigenvalue);
            }
        }
        let mut out = vec![
            self.problem.name().to_string(),
            mode_name(self.mode).to_string(),
            self.p.to_string(),
            num(self.coarse_h),
            self.ell.to_string(),
            num(self.fine_h),
            self.fine_q.to_string(),
            self.coeff.clone(),
            self.source.to_string(),
            self.seed.to_string(),
            self.coarse_dofs.to_string(),
            self.fine_dofs.to_string(),
        ];
        out.extend(m);
        out.push(u8::from(self.at_floor()).to_string());
        out.push(match &self.failure {
            None => "ok".to_string(),
            Some(e) => format!("error: {e}"),
        });
        out
    }
}

/// A fitted quantity, written after the records as a `#` comment line.
#[derive(Clone, Debug, PartialEq)]
pub enum FitLine {
    Eoc {
        ell: Ell,
        metric: &'static str,
        eoc: Eoc,
    },
    Decay {
        coarse_h: f64,
        metric: &'static str,
        factor: Option<f64>,
    },
}

impl std::fmt::Display for FitLine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let opt = |v: Option<f64>| v.map_or("none".to_string(), num);
        match self {
            FitLine::Eoc { ell, metric, eoc } => write!(
                f,
                "# eoc ell={ell} metric={metric} rate={} plateau_rate={} window={}",
                opt(eoc.rate),
                opt(eoc.plateau_rate),
                eoc.window
            ),
            FitLine::Decay {
                coarse_h,
                metric,
                factor,
            } => write!(
                f,
                "# decay H={} metric={metric} factor={}",
                num(*coarse_h),
                opt(*factor)
            ),
        }
    }
}

fn metric_value(r: &ExperimentRecord, metric: &str) -> Option<f64> {
    match (&r.metrics, metric) {
        (Metrics::Gpe { errors, .. }, "err_E") => Some(errors.energy),
        _ => r.primary_error(),
    }
}

fn metrics_of(problem: ProblemKind) -> &'static [&'static str] {
    match problem {
        ProblemKind::Elliptic => &["err_energy_rel"],
        ProblemKind::Helmholtz => &["err_kappa_rel"],
        ProblemKind::Gpe => &["err_h1", "err_E"],
    }
}

/// Fitted order in `H` per `ℓ` for every error of the problem.
pub fn eoc_lines(cfg: &ExperimentConfig, records: &[ExperimentRecord]) -> Vec<FitLine> {
    let mut out = Vec::new();
    for &ell in &cfg.ell {
        for &metric in metrics_of(cfg.problem) {
            let pts: Vec<(f64, f64)> = records
                .iter()
                .filter(|r| r.ell == ell)
                .filter_map(|r| metric_value(r, metric).map(|e| (r.coarse_h, e)))
                .collect();
            if pts.len() >= 2 {
                out.push(FitLine::Eoc {
                    ell,
                    metric,
                    eoc: fit_eoc(&pts),
                });
            }
        }
    }
    out
}

/// Decay factor in `ℓ` per `H`. Global patches are excluded.
pub fn decay_lines(cfg: &ExperimentConfig, records: &[ExperimentRecord]) -> Vec<FitLine> {
    let mut out = Vec::new();
    for &h in &cfg.coarse_h {
        for &metric in metrics_of(cfg.problem) {
            let pts: Vec<(usize, f64)> = records
                .iter()
                .filter(|r| r.coarse_h == h)
                .filter_map(|r| match r.ell {
                    Ell::Layers(l) => metric_value(r, metric).map(|e| (l, e)),
                    Ell::Global => None,
                })
                .collect();
            out.push(FitLine::Decay {
                coarse_h: h,
                metric,
                factor: decay_factor(&pts),
            });
        }
    }
    out
}

/// Streams records as CSV; each row is flushed so a failed run leaves a
/// readable partial file.
pub struct RecordWriter<W: Write> {
    inner: csv::Writer<W>,
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

impl<W: Write> RecordWriter<W> {
    pub fn new(w: W) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(w);
        inner.write_record(COLUMNS).map_err(csv_error)?;
        inner.flush()?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, r: &ExperimentRecord) -> Result<()> {
        self.inner.write_record(r.fields()).map_err(csv_error)?;
        self.inner.flush()?;
        Ok(())
    }

    /// Appends the fit lines and returns the underlying writer.
    pub fn finish(self, fits: &[FitLine]) -> Result<W> {
        let mut w = self
            .inner
            .into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        for f in fits {
            writeln!(w, "{f}")?;
        }
        w.flush()?;
        Ok(w)
    }
}

/// Wall-clock times, kept apart from the reproducible records.
pub fn write_timing(records: &[ExperimentRecord], w: &mut impl Write) -> Result<()> {
    writeln!(w, "H,ell,wall_ms")?;
    for r in records {
        writeln!(w, "{},{},{}", num(r.coarse_h), r.ell, r.wall_ms)?;
    }
    Ok(())
}

/// Whitespace-separated `H error` blocks, one per `ℓ`, separated by two
/// blank lines (gnuplot `index`).
pub fn write_gnuplot(
    cfg: &ExperimentConfig,
    records: &[ExperimentRecord],
    w: &mut impl Write,
) -> Result<()> {
    for (i, &ell) in cfg.ell.iter().enumerate() {
        if i > 0 {
            writeln!(w, "\n")?;
        }
        writeln!(w, "# ell={ell}")?;
        writeln!(
            w,
            "# H {}",
            records.first().map_or("error", |r| r.primary_name())
        )?;
        for r in records.iter().filter(|r| r.ell == ell) {
            if let Some(e) = r.primary_error() {
                writeln!(w, "{} {}", num(r.coarse_h), num(e))?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(h: f64, e: f64) -> ExperimentRecord {
        let cfg = ExperimentConfig::defaults(ProblemKind::Elliptic);
        let mut r = ExperimentRecord::new(&cfg, h, Ell::Global);
        r.metrics = Metrics::Elliptic {
            energy_rel: e,
            l2_rel: e * h,
        };
        r
    }

    #[test]
    fn csv_layout_is_fixed() {
        let mut w = RecordWriter::new(Vec::new()).unwrap();
        w.write(&record(0.5, 1e-2)).unwrap();
        let mut failed = record(0.25, 0.0);
        failed.metrics = Metrics::None;
        failed.failure = Some("boom".into());
        w.write(&failed).unwrap();
        let cfg = ExperimentConfig::defaults(ProblemKind::Elliptic);
        let fits = eoc_lines(
            &cfg,
            &[
                record(0.5, 1.0 / 8.0),
                record(0.25, 1.0 / 64.0),
                record(0.125, 1.0 / 512.0),
            ],
        );
        let text = String::from_utf8(w.finish(&fits).unwrap()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], COLUMNS.join(","));
        assert!(lines[1].starts_with(
            "elliptic,dg,1,5.000000000000000e-1,global,7.812500000000000e-3,1,a1:m=32,f1,0,"
        ));
        assert!(lines[1].contains(",1.000000000000000e-2,5.000000000000000e-3,"));
        assert!(lines[1].ends_with(",0,ok"));
        assert!(lines[2].ends_with(",,,,,,,,,0,error: boom"));
        assert_eq!(lines[3], "# eoc ell=global metric=err_energy_rel rate=3.000000000000000e0 plateau_rate=none window=3");
        let mut rd = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        assert_eq!(rd.records().count(), 2);
    }
}
