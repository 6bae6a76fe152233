//! `lod`: runs LOD experiments and writes their records as CSV.
//!
//! Exit codes: 0 on success, 1 when a cell failed or output could not be
//! written, 2 on usage errors.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lod_core::harness::{
    run_study, write_gnuplot, write_timing, ExperimentConfig, ProblemKind, RecordWriter, Study,
    StudyOutput,
};
use lod_core::par::{with_threads, Parallelism};
use lod_core::problems::write_grid;

#[derive(Parser, Debug)]
#[command(
    name = "lod",
    version,
    about = "Localized orthogonal decomposition experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Error against the fine reference for every (H, ell); order fit per ell.
    RunConvergence(ExperimentArgs),
    /// Error against the fine reference for every (H, ell); decay fit per H.
    RunDecay(ExperimentArgs),
    /// Convergence study of the Helmholtz problem.
    RunHelmholtz(ExperimentArgs),
    /// Ground-state study of the Gross–Pitaevskii problem.
    RunGpe(ExperimentArgs),
    /// Writes a coefficient grid file.
    ExportCoefficient(ExportArgs),
}

#[derive(Args, Debug, Default)]
struct ExperimentArgs {
    /// Flat `key = value` file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// elliptic, helmholtz or gpe.
    #[arg(long)]
    problem: Option<String>,
    /// Constraint space: cg or dg.
    #[arg(long)]
    mode: Option<String>,
    /// Polynomial degree of the constraint space.
    #[arg(long = "p")]
    p: Option<String>,
    /// Coarse mesh sizes, comma separated, rationals allowed (1/2,1/4).
    #[arg(long = "H")]
    coarse_h: Option<String>,
    /// Oversampling orders, comma separated; `global` for whole-domain patches.
    #[arg(long)]
    ell: Option<String>,
    /// Fine mesh size.
    #[arg(long = "fine-h")]
    fine_h: Option<String>,
    /// Fine Lagrange degree.
    #[arg(long = "fine-q")]
    fine_q: Option<String>,
    /// Coefficient or potential: a1[:m=..,seed=..], a2[:..], const:<v>, gpe[:m=..,amplitude=..], file:<path>.
    #[arg(long)]
    coeff: Option<String>,
    /// Seed for random coefficients without their own seed.
    #[arg(long)]
    seed: Option<String>,
    /// f1, f2 or f3.
    #[arg(long)]
    source: Option<String>,
    /// Helmholtz wavenumber.
    #[arg(long)]
    kappa: Option<String>,
    /// Gross–Pitaevskii interaction strength.
    #[arg(long = "kappa-g")]
    kappa_g: Option<String>,
    /// CSV path; standard output when absent.
    #[arg(long)]
    out: Option<String>,
    /// Worker thread cap.
    #[arg(long)]
    threads: Option<String>,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[arg(long)]
    coeff: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Grid path; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ExperimentArgs {
    fn pairs(&self) -> Vec<(String, String)> {
        let flags = [
            ("problem", &self.problem),
            ("mode", &self.mode),
            ("p", &self.p),
            ("H", &self.coarse_h),
            ("ell", &self.ell),
            ("fine-h", &self.fine_h),
            ("fine-q", &self.fine_q),
            ("coeff", &self.coeff),
            ("seed", &self.seed),
            ("source", &self.source),
            ("kappa", &self.kappa),
            ("kappa-g", &self.kappa_g),
            ("out", &self.out),
            ("threads", &self.threads),
        ];
        flags
            .into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect()
    }

    fn config(&self, forced: Option<ProblemKind>) -> Result<ExperimentConfig, String> {
        let mut pairs = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| format!("{}: {e}", path.display()))?;
                ExperimentConfig::parse_pairs(&text).map_err(|e| e.to_string())?
            }
            None => Vec::new(),
        };
        pairs.extend(self.pairs());
        let cfg = ExperimentConfig::from_pairs(forced, &pairs).map_err(|e| e.to_string())?;
        if let Some(kind) = forced {
            if cfg.problem != kind {
                return Err(format!(
                    "this subcommand runs the {} problem, not {}",
                    kind.name(),
                    cfg.problem.name()
                ));
            }
        }
        Ok(cfg)
    }
}

fn usage_error(msg: &str) -> ExitCode {
    eprintln!("error: {msg}\n\nRun `lod --help` for usage.");
    ExitCode::from(2)
}

/// Sidecar path next to `out` with a new extension.
fn sidecar(out: &Path, ext: &str) -> PathBuf {
    out.with_extension(ext)
}

fn run_experiment(args: &ExperimentArgs, study: Study, forced: Option<ProblemKind>) -> ExitCode {
    let cfg = match args.config(forced) {
        Ok(c) => c,
        Err(e) => return usage_error(&e),
    };
    let par = Parallelism::Rayon;
    log::info!(
        "{:?} study of the {} problem, {} coarse sizes",
        study,
        cfg.problem.name(),
        cfg.coarse_h.len()
    );
    let result = with_threads(cfg.threads, || -> lod_core::Result<StudyOutput> {
        let sink: Box<dyn Write> = match &cfg.out {
            Some(p) => Box::new(BufWriter::new(File::create(p)?)),
            None => Box::new(io::stdout().lock()),
        };
        let mut writer = RecordWriter::new(sink)?;
        let out = run_study(&cfg, study, par, &mut |r| writer.write(r))?;
        writer.finish(&out.fits)?;
        if let Some(p) = &cfg.out {
            write_timing(
                &out.records,
                &mut BufWriter::new(File::create(sidecar(p, "timing.csv"))?),
            )?;
            write_gnuplot(
                &cfg,
                &out.records,
                &mut BufWriter::new(File::create(sidecar(p, "dat"))?),
            )?;
        }
        Ok(out)
    });
    match result {
        Ok(out) => {
            for f in &out.fits {
                eprintln!("{f}");
            }
            match out.failed() {
                0 => ExitCode::SUCCESS,
                n => {
                    eprintln!("error: {n} of {} cells failed", out.records.len());
                    ExitCode::from(1)
                }
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn export(args: &ExportArgs) -> ExitCode {
    let spec = match args.coeff.parse::<lod_core::harness::CoeffSpec>() {
        Ok(s) => s,
        Err(e) => return usage_error(&e.to_string()),
    };
    let result = (|| -> lod_core::Result<()> {
        let field = spec.build(args.seed.unwrap_or(0))?;
        match &args.out {
            Some(p) => {
                let mut w = BufWriter::new(File::create(p)?);
                write_grid(&field, &mut w)?;
                w.flush()?;
            }
            None => write_grid(&field, &mut io::stdout().lock())?,
        }
        Ok(())
    })();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::RunConvergence(a) => run_experiment(a, Study::Convergence, None),
        Command::RunDecay(a) => run_experiment(a, Study::Decay, None),
        Command::RunHelmholtz(a) => {
            run_experiment(a, Study::Convergence, Some(ProblemKind::Helmholtz))
        }
        Command::RunGpe(a) => run_experiment(a, Study::Convergence, Some(ProblemKind::Gpe)),
        Command::ExportCoefficient(a) => export(a),
    }
}
