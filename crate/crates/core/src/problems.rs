//! Coefficients, sources and potentials of the numerical experiments.
//!
//! Random fields draw one value per cell from a ChaCha8 stream selected by
//! the cell index, so every cell value depends only on `(seed, i, j)`.

use std::f64::consts::PI;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::fem::CoefficientField;
use crate::grid::Domain;

/// Value range of the random cells.
pub const RANDOM_RANGE: (f64, f64) = (0.1, 1.0);
/// Coefficient value inside the parabola inclusion.
pub const INCLUSION_VALUE: f64 = 2.0;
/// Half-width of the inclusion in units of the cell size.
pub const INCLUSION_CELLS: f64 = 4.0;

/// Salt separating the `A₂` streams from those of `A₁`.
const A2_SALT: u64 = 0x5a17_2b0c_9e3d_4f61;

fn cell_value(seed: u64, m: usize, i: usize, j: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((j * m + i) as u64);
    rng.random_range(RANDOM_RANGE.0..RANDOM_RANGE.1)
}

/// Distance from `(x, y)` to the parabola `y = (2x − 1)²`.
pub fn parabola_distance(x: f64, y: f64) -> f64 {
    let d2 = |t: f64| (t - x).powi(2) + ((2.0 * t - 1.0).powi(2) - y).powi(2);
    // Coarse scan, then Newton on the derivative of the squared distance.
    let steps = 3000;
    let (mut best, mut t) = (f64::INFINITY, 0.0);
    for k in 0..=steps {
        let s = -1.0 + 3.0 * k as f64 / steps as f64;
        let v = d2(s);
        if v < best {
            best = v;
            t = s;
        }
    }
    for _ in 0..8 {
        let g = 2.0 * (t - x) + 8.0 * ((2.0 * t - 1.0).powi(2) - y) * (2.0 * t - 1.0);
        let gp = 2.0 + 8.0 * (4.0 * (2.0 * t - 1.0).powi(2) + 2.0 * ((2.0 * t - 1.0).powi(2) - y));
        if gp <= 0.0 {
            break;
        }
        let next = t - g / gp;
        if d2(next) > d2(t) {
            break;
        }
        t = next;
    }
    d2(t).min(best).sqrt()
}

/// `A₁` on the unit square: value 2 on cells whose midpoint lies within `4ε`
/// of the parabola, uniform on `[0.1, 1]` elsewhere.
pub fn coefficient_a1(m: usize, seed: u64) -> Result<CoefficientField> {
    if m < 4 {
        return Err(invalid(format!(
            "A1 needs at least 4 cells per side, got {m}"
        )));
    }
    let eps = 1.0 / m as f64;
    let values = (0..m * m)
        .map(|k| {
            let (i, j) = (k % m, k / m);
            let (x, y) = ((i as f64 + 0.5) * eps, (j as f64 + 0.5) * eps);
            if parabola_distance(x, y) <= INCLUSION_CELLS * eps {
                INCLUSION_VALUE
            } else {
                cell_value(seed, m, i, j)
            }
        })
        .collect();
    CoefficientField::new(Domain::unit_square(), m, values)
}

/// Whether cell `(i, j)` of an `m`-grid belongs to the `A₁` inclusion.
pub fn in_inclusion(m: usize, i: usize, j: usize) -> bool {
    let eps = 1.0 / m as f64;
    parabola_distance((i as f64 + 0.5) * eps, (j as f64 + 0.5) * eps) <= INCLUSION_CELLS * eps
}

/// `A₂` on the unit square: random checkerboard on `[0.1, 1]`.
pub fn coefficient_a2(m: usize, seed: u64) -> Result<CoefficientField> {
    if m == 0 {
        return Err(invalid("A2 needs at least one cell"));
    }
    let values = (0..m * m)
        .map(|k| cell_value(seed ^ A2_SALT, m, k % m, k / m))
        .collect();
    CoefficientField::new(Domain::unit_square(), m, values)
}

/// Periodic tent with period one: 0 at integers, 1 at half-integers.
pub fn tent(t: f64) -> f64 {
    1.0 - (2.0 * t.rem_euclid(1.0) - 1.0).abs()
}

/// Trapping potential `½|x|² + amplitude · tent(x) tent(y)` on `(−6, 6)²`,
/// sampled at cell midpoints.
pub fn gpe_potential(m: usize, amplitude: f64) -> Result<CoefficientField> {
    let domain = Domain::centered(6.0)?;
    CoefficientField::from_midpoints(domain, m, |x, y| {
        0.5 * (x * x + y * y) + amplitude * tent(x) * tent(y)
    })
}

/// Named source terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    /// `2π² sin(πx) sin(πy)`
    F1,
    /// `1`
    F2,
    /// Smooth bump of height `10⁴/e` and radius `1/20` centred at `(1/8, 1/8)`.
    F3,
}

impl Source {
    pub fn eval(self, x: f64, y: f64) -> f64 {
        match self {
            Source::F1 => 2.0 * PI * PI * (PI * x).sin() * (PI * y).sin(),
            Source::F2 => 1.0,
            Source::F3 => {
                let r2 = (x - 0.125).powi(2) + (y - 0.125).powi(2);
                let rad2 = 0.05 * 0.05;
                if r2 < rad2 {
                    1e4 * (-1.0 / (1.0 - r2 / rad2)).exp()
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Source::F1 => "f1",
            Source::F2 => "f2",
            Source::F3 => "f3",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Source {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "f1" => Ok(Source::F1),
            "f2" => Ok(Source::F2),
            "f3" => Ok(Source::F3),
            other => Err(invalid(format!(
                "unknown source `{other}` (expected f1, f2 or f3)"
            ))),
        }
    }
}

/// Writes a coefficient grid: `m <m>`, `domain <x0> <y0> <side>`, then the
/// values row-major, one row of cells per line.
pub fn write_grid(field: &CoefficientField, w: &mut impl Write) -> Result<()> {
    writeln!(w, "m {}", field.m)?;
    let d = field.domain;
    writeln!(w, "domain {:e} {:e} {:e}", d.origin[0], d.origin[1], d.side)?;
    for row in field.values.chunks(field.m) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    Ok(())
}

/// Reads a grid written by [`write_grid`].
pub fn read_grid(r: &mut impl BufRead) -> Result<CoefficientField> {
    let mut lines = r.lines();
    let mut next = || -> Result<String> {
        lines
            .next()
            .ok_or_else(|| Error::Format("unexpected end of grid file".into()))?
            .map_err(Error::from)
    };
    let header = next()?;
    let m: usize = header
        .strip_prefix("m ")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::Format(format!("bad grid header `{header}`")))?;
    let dl = next()?;
    let nums: Vec<f64> = dl
        .strip_prefix("domain ")
        .map(|s| {
            s.split_whitespace()
                .filter_map(|t| t.parse().ok())
                .collect()
        })
        .unwrap_or_default();
    if nums.len() != 3 {
        return Err(Error::Format(format!("bad domain line `{dl}`")));
    }
    let domain = Domain::new([nums[0], nums[1]], nums[2])?;
    let mut values = Vec::with_capacity(m * m);
    for line in lines {
        for tok in line?.split_whitespace() {
            values.push(
                tok.parse::<f64>()
                    .map_err(|e| Error::Format(format!("bad value `{tok}`: {e}")))?,
            );
        }
    }
    CoefficientField::new(domain, m, values).map_err(|e| Error::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn a1_bounds_and_determinism() {
        let a = coefficient_a1(32, 7).unwrap();
        let (lo, hi) = a.bounds();
        assert!(lo >= 0.1 && hi <= 2.0);
        assert_eq!(a, coefficient_a1(32, 7).unwrap());
        assert!(a.values.contains(&INCLUSION_VALUE));
    }

    #[test]
    fn seed_change_alters_random_cells() {
        let (a, b) = (
            coefficient_a1(32, 1).unwrap(),
            coefficient_a1(32, 2).unwrap(),
        );
        let mut total = 0;
        let mut changed = 0;
        for j in 0..32 {
            for i in 0..32 {
                if !in_inclusion(32, i, j) {
                    total += 1;
                    changed += usize::from(a.cell(i, j) != b.cell(i, j));
                }
            }
        }
        assert!(changed as f64 >= 0.9 * total as f64);
    }

    #[test]
    fn a1_random_cells_have_uniform_mean() {
        let a = coefficient_a1(64, 0).unwrap();
        let vals: Vec<f64> = (0..64 * 64)
            .filter(|&k| !in_inclusion(64, k % 64, k / 64))
            .map(|k| a.values[k])
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((mean - 0.55).abs() <= 0.07, "mean {mean}");
    }

    #[test]
    fn parabola_distance_matches_known_points() {
        assert!(parabola_distance(0.5, 0.0) < 1e-12);
        assert!(parabola_distance(0.0, 1.0) < 1e-12);
        assert!((parabola_distance(0.5, -0.25) - 0.25).abs() < 1e-9);
    }

    #[test]
    fn sources() {
        assert_eq!(Source::F2.eval(0.3, 0.9), 1.0);
        assert!((Source::F3.eval(0.125, 0.125) - 1e4 * (-1.0f64).exp()).abs() < 1e-9);
        assert_eq!(Source::F3.eval(0.125 + 0.0501, 0.125), 0.0);
        assert!((Source::F1.eval(0.5, 0.5) - 2.0 * PI * PI).abs() < 1e-12);
        assert!("f4".parse::<Source>().is_err());
    }

    #[test]
    fn tent_values() {
        assert_eq!(tent(0.25), 0.5);
        assert_eq!(tent(0.5), 1.0);
        assert_eq!(tent(1.0), 0.0);
        assert_eq!(tent(-0.75), 0.5);
        let v = gpe_potential(96, 40.0).unwrap();
        assert!(v.bounds().0 >= 0.0);
        let h = 12.0 / 96.0;
        let x = -6.0 + 48.5 * h;
        assert!((v.cell(48, 48) - (x * x + 40.0 * tent(x) * tent(x))).abs() < 1e-12);
    }

    #[test]
    fn grid_round_trip() {
        let a = coefficient_a2(8, 3).unwrap();
        let mut buf = Vec::new();
        write_grid(&a, &mut buf).unwrap();
        let back = read_grid(&mut buf.as_slice()).unwrap();
        assert_eq!(back, a);
    }
}
