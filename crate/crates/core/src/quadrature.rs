//! One-dimensional Gauss rules and polynomial bases on the unit interval.

/// Gauss–Legendre rule with `n` points on `[0, 1]`, exact for degree `2n - 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "a Gauss rule needs at least one point");
        let mut points = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            // Chebyshev-like initial guess for the i-th root on [-1, 1].
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            points[i] = 0.5 * (1.0 - x);
            points[n - 1 - i] = 0.5 * (1.0 + x);
            weights[i] = 0.5 * w;
            weights[n - 1 - i] = 0.5 * w;
        }
        Self { points, weights }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `∫_0^1 f`
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Legendre polynomial `P_n(x)` on `[-1, 1]` and its derivative.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Values `L_0(ξ), …, L_p(ξ)` of the `L²(0,1)`-orthonormal Legendre
/// polynomials `L_k(ξ) = √(2k+1) P_k(2ξ - 1)`.
pub fn legendre_orthonormal(p: usize, xi: f64) -> Vec<f64> {
    let x = 2.0 * xi - 1.0;
    let mut out = Vec::with_capacity(p + 1);
    let (mut p0, mut p1) = (1.0, x);
    for k in 0..=p {
        let pk = match k {
            0 => 1.0,
            1 => x,
            _ => {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
                p2
            }
        };
        out.push((2.0 * k as f64 + 1.0).sqrt() * pk);
    }
    out
}

/// Equispaced Lagrange basis of degree `q` on `[0, 1]`.
#[derive(Clone, Debug)]
pub struct LagrangeBasis {
    pub degree: usize,
    nodes: Vec<f64>,
}

impl LagrangeBasis {
    pub fn new(degree: usize) -> Self {
        assert!(degree >= 1, "Lagrange basis needs degree at least one");
        let nodes = (0..=degree).map(|i| i as f64 / degree as f64).collect();
        Self { degree, nodes }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Value of the `i`-th basis function at `x`.
    pub fn value(&self, i: usize, x: f64) -> f64 {
        let xi = self.nodes[i];
        self.nodes
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != i)
            .map(|(_, &xk)| (x - xk) / (xi - xk))
            .product()
    }

    /// Derivative of the `i`-th basis function at `x`.
    pub fn derivative(&self, i: usize, x: f64) -> f64 {
        let xi = self.nodes[i];
        let mut sum = 0.0;
        for (m, &xm) in self.nodes.iter().enumerate() {
            if m == i {
                continue;
            }
            let mut term = 1.0 / (xi - xm);
            for (k, &xk) in self.nodes.iter().enumerate() {
                if k != i && k != m {
                    term *= (x - xk) / (xi - xk);
                }
            }
            sum += term;
        }
        sum
    }

    pub fn values(&self, x: f64) -> Vec<f64> {
        (0..=self.degree).map(|i| self.value(i, x)).collect()
    }

    pub fn derivatives(&self, x: f64) -> Vec<f64> {
        (0..=self.degree).map(|i| self.derivative(i, x)).collect()
    }
}

/// Reference 1D stiffness `∫ φ_i' φ_j'` and mass `∫ φ_i φ_j` on `[0, 1]`.
pub fn reference_matrices_1d(q: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let basis = LagrangeBasis::new(q);
    let rule = GaussRule::new(q + 1);
    let mut k = vec![vec![0.0; q + 1]; q + 1];
    let mut m = vec![vec![0.0; q + 1]; q + 1];
    for (&x, &w) in rule.points.iter().zip(&rule.weights) {
        let v = basis.values(x);
        let d = basis.derivatives(x);
        for i in 0..=q {
            for j in 0..=q {
                k[i][j] += w * d[i] * d[j];
                m[i][j] += w * v[i] * v[j];
            }
        }
    }
    (k, m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_rules_integrate_monomials_exactly() {
        for n in 1..=8 {
            let rule = GaussRule::new(n);
            assert!((rule.weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            for deg in 0..2 * n {
                let exact = 1.0 / (deg as f64 + 1.0);
                let got = rule.integrate(|x| x.powi(deg as i32));
                assert!(
                    (got - exact).abs() < 1e-14,
                    "n={n} deg={deg}: {got} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn legendre_modes_are_orthonormal() {
        let rule = GaussRule::new(6);
        for a in 0..=4 {
            for b in 0..=4 {
                let v = rule.integrate(|x| {
                    let l = legendre_orthonormal(4, x);
                    l[a] * l[b]
                });
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((v - expect).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn lagrange_partition_of_unity() {
        for q in 1..=4 {
            let b = LagrangeBasis::new(q);
            for &x in &[0.0, 0.17, 0.5, 0.93] {
                assert!((b.values(x).iter().sum::<f64>() - 1.0).abs() < 1e-13);
                assert!(b.derivatives(x).iter().sum::<f64>().abs() < 1e-11);
            }
            for i in 0..=q {
                for j in 0..=q {
                    let v = b.value(i, b.nodes()[j]);
                    assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn p1_reference_matrices() {
        let (k, m) = reference_matrices_1d(1);
        assert!((k[0][0] - 1.0).abs() < 1e-15 && (k[0][1] + 1.0).abs() < 1e-15);
        assert!((m[0][0] - 1.0 / 3.0).abs() < 1e-15 && (m[0][1] - 1.0 / 6.0).abs() < 1e-15);
    }
}
