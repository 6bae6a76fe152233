//! Convergence-order and decay-factor fits.

/// Errors at or below this value count as solver floor.
pub const SOLVER_FLOOR: f64 = 1e-9;

/// A series stalls when its last halving gains less than this factor.
const STALL_RATIO: f64 = 2.0;

/// Least-squares slope of `log y` against `log x`. `None` below two points.
pub fn log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Fitted orders of one error series in `H`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Eoc {
    /// Slope over the pre-plateau window.
    pub rate: Option<f64>,
    /// Slope over the plateau records, when there are at least two.
    pub plateau_rate: Option<f64>,
    /// Records in the pre-plateau window.
    pub window: usize,
}

/// Fits the order of `(H, error)` pairs.
///
/// The series has plateaued when its smallest error is at the solver floor
/// or the finest halving reduced the error by less than a factor of two. The
/// plateau is then every record within 10× of the smallest error, and the
/// window is everything above it. A series still converging at its finest
/// level has no plateau and the window is the whole series.
pub fn fit_eoc(points: &[(f64, f64)]) -> Eoc {
    let mut pts: Vec<(f64, f64)> = points.to_vec();
    pts.sort_by(|a, b| b.0.total_cmp(&a.0));
    let min = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let stalled = match pts.len() {
        0 | 1 => false,
        n => min <= SOLVER_FLOOR || pts[n - 2].1 < STALL_RATIO * pts[n - 1].1,
    };
    let (window, plateau): (Vec<_>, Vec<_>) = if stalled {
        pts.iter().partition(|p| p.1 > 10.0 * min)
    } else {
        (pts.clone(), Vec::new())
    };
    Eoc {
        rate: log_slope(&window),
        plateau_rate: log_slope(&plateau),
        window: window.len(),
    }
}

/// Geometric mean decay factor per unit step of `(ℓ, error)` pairs above
/// the solver floor. `None` below two such records.
pub fn decay_factor(points: &[(usize, f64)]) -> Option<f64> {
    let mut pts: Vec<(usize, f64)> = points
        .iter()
        .copied()
        .filter(|p| p.1 > SOLVER_FLOOR)
        .collect();
    pts.sort_by_key(|p| p.0);
    let (first, last) = (pts.first()?, pts.last()?);
    if last.0 == first.0 {
        return None;
    }
    // Product of successive ratios telescopes.
    Some((last.1 / first.1).powf(1.0 / (last.0 - first.0) as f64))
}
