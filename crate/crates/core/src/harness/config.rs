//! Experiment configuration from `key = value` pairs.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::constraints::Mode;
use crate::error::{invalid, Error, Result};
use crate::fem::CoefficientField;
use crate::grid::Domain;
use crate::problems::{coefficient_a1, coefficient_a2, gpe_potential, read_grid, Source};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProblemKind {
    Elliptic,
    Helmholtz,
    Gpe,
}

impl ProblemKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Elliptic => "elliptic",
            Self::Helmholtz => "helmholtz",
            Self::Gpe => "gpe",
        }
    }
}

impl FromStr for ProblemKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "elliptic" => Ok(Self::Elliptic),
            "helmholtz" => Ok(Self::Helmholtz),
            "gpe" => Ok(Self::Gpe),
            o => Err(invalid(format!(
                "unknown problem `{o}` (expected elliptic, helmholtz or gpe)"
            ))),
        }
    }
}

pub fn parse_mode(s: &str) -> Result<Mode> {
    match s.trim() {
        "cg" => Ok(Mode::Cg),
        "dg" => Ok(Mode::Dg),
        o => Err(invalid(format!("unknown mode `{o}` (expected cg or dg)"))),
    }
}

pub fn mode_name(m: Mode) -> &'static str {
    match m {
        Mode::Cg => "cg",
        Mode::Dg => "dg",
    }
}

/// Parses `a/b` or a decimal.
pub fn parse_rational(s: &str) -> Result<f64> {
    let s = s.trim();
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let (a, b): (f64, f64) = (
                a.trim()
                    .parse()
                    .map_err(|_| invalid(format!("bad number `{s}`")))?,
                b.trim()
                    .parse()
                    .map_err(|_| invalid(format!("bad number `{s}`")))?,
            );
            a / b
        }
        None => s
            .parse()
            .map_err(|_| invalid(format!("bad number `{s}`")))?,
    };
    if !v.is_finite() || v <= 0.0 {
        return Err(invalid(format!("`{s}` is not a positive number")));
    }
    Ok(v)
}

fn parse_uint(key: &str, s: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| invalid(format!("`{key}` expects a non-negative integer, got `{s}`")))
}

/// Oversampling order; `global` means patches covering the whole domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ell {
    Layers(usize),
    Global,
}

impl Ell {
    /// Layers used on a mesh with `n` elements per side.
    pub fn resolve(self, n: usize) -> usize {
        match self {
            Self::Layers(l) => l.min(n),
            Self::Global => n,
        }
    }
}

impl fmt::Display for Ell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Layers(l) => write!(f, "{l}"),
            Self::Global => f.write_str("global"),
        }
    }
}

impl FromStr for Ell {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "global" => Ok(Self::Global),
            t => match parse_uint("ell", t)? {
                0 => Err(invalid("oversampling order must be at least one")),
                l => Ok(Self::Layers(l)),
            },
        }
    }
}

/// Coefficient (elliptic, Helmholtz) or potential (GPE) generator.
#[derive(Clone, Debug, PartialEq)]
pub enum CoeffSpec {
    A1 { m: usize, seed: Option<u64> },
    A2 { m: usize, seed: Option<u64> },
    Constant(f64),
    Gpe { m: usize, amplitude: f64 },
    File(PathBuf),
}

impl CoeffSpec {
    /// Builds the field; `seed` applies when the spec carries none.
    pub fn build(&self, seed: u64) -> Result<CoefficientField> {
        match self {
            Self::A1 { m, seed: s } => coefficient_a1(*m, s.unwrap_or(seed)),
            Self::A2 { m, seed: s } => coefficient_a2(*m, s.unwrap_or(seed)),
            Self::Constant(c) => Ok(CoefficientField::constant(Domain::unit_square(), *c)),
            Self::Gpe { m, amplitude } => gpe_potential(*m, *amplitude),
            Self::File(p) => read_grid(&mut std::io::BufReader::new(std::fs::File::open(p)?)),
        }
    }

    /// Domain of the field, known without building it when not file based.
    pub fn domain(&self) -> Result<Domain> {
        match self {
            Self::Gpe { .. } => Domain::centered(6.0),
            Self::File(_) => Ok(self.build(0)?.domain),
            _ => Ok(Domain::unit_square()),
        }
    }
}

impl fmt::Display for CoeffSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::A1 { m, seed: Some(s) } => write!(f, "a1:m={m};seed={s}"),
            Self::A1 { m, seed: None } => write!(f, "a1:m={m}"),
            Self::A2 { m, seed: Some(s) } => write!(f, "a2:m={m};seed={s}"),
            Self::A2 { m, seed: None } => write!(f, "a2:m={m}"),
            Self::Constant(c) => write!(f, "const:{c}"),
            Self::Gpe { m, amplitude } => write!(f, "gpe:m={m};amplitude={amplitude}"),
            Self::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

impl FromStr for CoeffSpec {
    type Err = Error;
    /// `a1[:m=32,seed=7]`, `a2[:…]`, `const:<value>`,
    /// `gpe[:m=96,amplitude=40]`, `file:<path>`. Options may be separated by
    /// `,` or `;`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        if kind == "file" {
            return Ok(Self::File(PathBuf::from(rest)));
        }
        if kind == "const" {
            let c: f64 = rest
                .trim()
                .parse()
                .map_err(|_| invalid(format!("bad constant coefficient `{rest}`")))?;
            return Ok(Self::Constant(c));
        }
        let mut m = None;
        let mut seed = None;
        let mut amplitude = None;
        for opt in rest.split([',', ';']).filter(|o| !o.trim().is_empty()) {
            let (k, v) = opt
                .split_once('=')
                .ok_or_else(|| invalid(format!("coefficient option `{opt}` is not key=value")))?;
            match k.trim() {
                "m" => m = Some(parse_uint("m", v)?),
                "seed" => seed = Some(parse_uint("seed", v)? as u64),
                "amplitude" => {
                    amplitude = Some(
                        v.trim()
                            .parse()
                            .map_err(|_| invalid(format!("bad amplitude `{v}`")))?,
                    )
                }
                o => return Err(invalid(format!("unknown coefficient option `{o}`"))),
            }
        }
        match kind {
            "a1" if amplitude.is_none() => Ok(Self::A1 {
                m: m.unwrap_or(32),
                seed,
            }),
            "a2" if amplitude.is_none() => Ok(Self::A2 {
                m: m.unwrap_or(32),
                seed,
            }),
            "gpe" if seed.is_none() => Ok(Self::Gpe {
                m: m.unwrap_or(96),
                amplitude: amplitude.unwrap_or(40.0),
            }),
            "a1" | "a2" | "gpe" => Err(invalid(format!("option not valid for `{kind}`"))),
            o => Err(invalid(format!(
                "unknown coefficient `{o}` (expected a1, a2, const, gpe or file)"
            ))),
        }
    }
}

/// One experiment: every `(H, ℓ)` pair is a cell.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemKind,
    pub mode: Mode,
    pub p: usize,
    /// Coarse mesh sizes, coarse to fine after validation.
    pub coarse_h: Vec<f64>,
    pub ell: Vec<Ell>,
    pub fine_h: f64,
    pub fine_q: usize,
    pub coeff: CoeffSpec,
    pub source: Source,
    pub seed: u64,
    /// Helmholtz wavenumber.
    pub kappa: f64,
    /// GPE interaction strength.
    pub kappa_g: f64,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    /// Defaults of the desk-scale setups.
    pub fn defaults(problem: ProblemKind) -> Self {
        let base = Self {
            problem,
            mode: Mode::Dg,
            p: 1,
            coarse_h: vec![0.5, 0.25, 0.125, 0.0625],
            ell: vec![Ell::Global],
            fine_h: 1.0 / 128.0,
            fine_q: 1,
            coeff: CoeffSpec::A1 { m: 32, seed: None },
            source: Source::F1,
            seed: 0,
            kappa: 16.0,
            kappa_g: 100.0,
            out: None,
            threads: None,
        };
        match problem {
            ProblemKind::Elliptic => base,
            ProblemKind::Helmholtz => Self {
                p: 2,
                coarse_h: vec![1.0 / 16.0],
                ell: vec![Ell::Layers(3)],
                fine_q: 2,
                coeff: CoeffSpec::Constant(1.0),
                source: Source::F3,
                ..base
            },
            ProblemKind::Gpe => Self {
                p: 2,
                coarse_h: vec![1.5, 0.75, 0.375],
                ell: vec![Ell::Layers(4)],
                fine_h: 1.0 / 32.0,
                coeff: CoeffSpec::Gpe {
                    m: 96,
                    amplitude: 40.0,
                },
                ..base
            },
        }
    }

    /// Applies one `key = value` setting. Keys match the CLI flags without
    /// the leading dashes.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let list = |v: &str| {
            v.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect::<Vec<_>>()
        };
        match key.trim() {
            "problem" => self.problem = value.parse()?,
            "mode" => self.mode = parse_mode(value)?,
            "p" => self.p = parse_uint("p", value)?,
            "H" => {
                self.coarse_h = list(value)
                    .iter()
                    .map(|s| parse_rational(s))
                    .collect::<Result<_>>()?
            }
            "ell" => {
                self.ell = list(value)
                    .iter()
                    .map(|s| s.parse())
                    .collect::<Result<_>>()?
            }
            "fine-h" => self.fine_h = parse_rational(value)?,
            "fine-q" => self.fine_q = parse_uint("fine-q", value)?,
            "coeff" => self.coeff = value.parse()?,
            "source" => self.source = value.parse()?,
            "seed" => self.seed = parse_uint("seed", value)? as u64,
            "kappa" => self.kappa = parse_rational(value)?,
            "kappa-g" => {
                self.kappa_g = value
                    .trim()
                    .parse()
                    .map_err(|_| invalid(format!("bad interaction strength `{value}`")))?
            }
            "out" => self.out = Some(PathBuf::from(value.trim())),
            "threads" => self.threads = Some(parse_uint("threads", value)?.max(1)),
            o => return Err(invalid(format!("unknown configuration key `{o}`"))),
        }
        Ok(())
    }

    /// Parses a config file body: `key = value` lines, `#` comments.
    pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("line {}: expected `key = value`", no + 1)))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }

    /// Reads a config file. The `problem` key, if present, selects the
    /// defaults the other keys modify.
    pub fn from_file(path: &Path) -> Result<Self> {
        let pairs = Self::parse_pairs(&std::fs::read_to_string(path)?)?;
        Self::from_pairs(None, &pairs)
    }

    pub fn from_pairs(problem: Option<ProblemKind>, pairs: &[(String, String)]) -> Result<Self> {
        let problem = match pairs.iter().rev().find(|(k, _)| k == "problem") {
            Some((_, v)) => v.parse()?,
            None => problem.unwrap_or(ProblemKind::Elliptic),
        };
        let mut cfg = Self::defaults(problem);
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks mesh alignment and sorts `H` from coarse to fine.
    pub fn validate(&mut self) -> Result<()> {
        if self.p == 0 {
            return Err(invalid("polynomial degree must be positive"));
        }
        if self.fine_q == 0 {
            return Err(invalid("fine degree must be positive"));
        }
        if self.coarse_h.is_empty() || self.ell.is_empty() {
            return Err(invalid("H and ell lists must not be empty"));
        }
        let side = self.coeff.domain()?.side;
        let n_fine = cells(side, self.fine_h, "fine-h")?;
        for &h in &self.coarse_h {
            let n = cells(side, h, "H")?;
            if n_fine % n != 0 {
                return Err(invalid(format!(
                    "fine mesh size {} does not divide H = {h}",
                    self.fine_h
                )));
            }
        }
        self.coarse_h.sort_by(|a, b| b.total_cmp(a));
        self.coarse_h.dedup();
        Ok(())
    }

    pub fn domain(&self) -> Result<Domain> {
        self.coeff.domain()
    }

    /// Elements per side for mesh size `h`.
    pub fn cells(&self, h: f64) -> Result<usize> {
        cells(self.domain()?.side, h, "mesh size")
    }
}

fn cells(side: f64, h: f64, what: &str) -> Result<usize> {
    let n = (side / h).round();
    if n < 1.0 || (n * h - side).abs() > 1e-9 * side {
        return Err(invalid(format!(
            "{what} = {h} does not divide the domain side {side}"
        )));
    }
    Ok(n as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rationals_and_lists() {
        assert_eq!(parse_rational("1/128").unwrap(), 1.0 / 128.0);
        assert_eq!(parse_rational(" 0.25 ").unwrap(), 0.25);
        assert!(parse_rational("1/0").is_err());
        assert!(parse_rational("-1").is_err());
        let mut c = ExperimentConfig::defaults(ProblemKind::Elliptic);
        c.set("H", "1/8, 1/2,1/4").unwrap();
        c.set("ell", "1,2,global").unwrap();
        c.validate().unwrap();
        assert_eq!(c.coarse_h, vec![0.5, 0.25, 0.125]);
        assert_eq!(c.ell, vec![Ell::Layers(1), Ell::Layers(2), Ell::Global]);
    }

    #[test]
    fn coefficient_specs() {
        assert_eq!(
            "a1:m=32,seed=7".parse::<CoeffSpec>().unwrap(),
            CoeffSpec::A1 {
                m: 32,
                seed: Some(7)
            }
        );
        assert_eq!(
            "a2".parse::<CoeffSpec>().unwrap(),
            CoeffSpec::A2 { m: 32, seed: None }
        );
        assert_eq!(
            "const:2".parse::<CoeffSpec>().unwrap(),
            CoeffSpec::Constant(2.0)
        );
        assert!("a1:amplitude=3".parse::<CoeffSpec>().is_err());
        assert!("b7".parse::<CoeffSpec>().is_err());
        let s = CoeffSpec::Gpe {
            m: 96,
            amplitude: 40.0,
        };
        assert_eq!(s.to_string().parse::<CoeffSpec>().unwrap(), s);
    }

    #[test]
    fn config_file_pairs() {
        let text = "# study\nproblem = gpe\nH = 3/4, 3/8  # two levels\n\nell = 4\n";
        let cfg = ExperimentConfig::from_pairs(None, &ExperimentConfig::parse_pairs(text).unwrap())
            .unwrap();
        assert_eq!(cfg.problem, ProblemKind::Gpe);
        assert_eq!(cfg.coarse_h, vec![0.75, 0.375]);
        assert_eq!(cfg.cells(0.375).unwrap(), 32);
        assert!(ExperimentConfig::parse_pairs("novalue").is_err());
        assert!(ExperimentConfig::from_pairs(None, &[("colour".into(), "red".into())]).is_err());
    }

    #[test]
    fn misaligned_meshes_are_rejected() {
        let mut c = ExperimentConfig::defaults(ProblemKind::Elliptic);
        c.set("H", "1/3").unwrap();
        assert!(c.validate().is_err());
        c.set("H", "1/4").unwrap();
        c.set("fine-h", "1/6").unwrap();
        assert!(c.validate().is_err());
    }
}
