//! Gauss-Legendre quadrature on arbitrary intervals and 2D tensor products.
//!
//! All integrals in the operator representation and in the risk terms go
//! through these rules: the fixed integration points of the solution
//! representation, the half-range velocity rules of the transport problem,
//! and the velocity-average rule used for densities.

use crate::error::{Error, Result};

/// Nodes and weights of a quadrature rule on an interval `(a, b)`.
///
/// Invariants (checked in debug builds and by the test suite):
/// * weights are positive and sum to `b - a`,
/// * nodes are strictly increasing and strictly inside `(a, b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    interval: (f64, f64),
}

impl QuadratureRule {
    /// The `n`-point Gauss-Legendre rule on `(-1, 1)`, exact for
    /// polynomials of degree `<= 2n - 1`.
    ///
    /// Nodes are found by Newton iteration on the Legendre polynomial
    /// `P_n`, started from the cosine estimate of the k-th root and
    /// polished to ~1e-15.
    pub fn gauss_legendre(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::contract("gauss_legendre requires n >= 1"));
        }
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        // Roots come in +/- pairs; solve the upper half and mirror.
        for k in 0..n.div_ceil(2) {
            // Initial guess for the (k+1)-th largest root of P_n.
            let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() <= 1e-15 {
                    // One polishing step after convergence.
                    let (p, d) = legendre_with_derivative(n, x);
                    dp = d;
                    x -= p / d;
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[n - 1 - k] = x;
            nodes[k] = -x;
            weights[n - 1 - k] = w;
            weights[k] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
            let (_, d) = legendre_with_derivative(n, 0.0);
            weights[n / 2] = 2.0 / (d * d);
        }
        Ok(Self {
            nodes,
            weights,
            interval: (-1.0, 1.0),
        })
    }

    /// Affinely maps this rule onto `(a, b)`; weights scale by `(b-a)/2`
    /// relative to the reference length of the source interval.
    pub fn mapped(&self, a: f64, b: f64) -> Result<Self> {
        if !(a < b) {
            return Err(Error::contract(format!(
                "map requires a < b, got ({a}, {b})"
            )));
        }
        let (lo, hi) = self.interval;
        // Midpoint/half-width form; an identity map stays bit-exact.
        let c_src = 0.5 * (lo + hi);
        let c_dst = 0.5 * (a + b);
        let scale = (b - a) / (hi - lo);
        let nodes = self
            .nodes
            .iter()
            .map(|&x| c_dst + (x - c_src) * scale)
            .collect();
        let weights = self.weights.iter().map(|&w| w * scale).collect();
        Ok(Self {
            nodes,
            weights,
            interval: (a, b),
        })
    }

    /// The `n`-point Gauss-Legendre rule mapped onto `(a, b)`.
    pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> Result<Self> {
        Self::gauss_legendre(n)?.mapped(a, b)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn interval(&self) -> (f64, f64) {
        self.interval
    }

    /// Applies the rule to `f`.
    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Evaluates `P_n(x)` and `P_n'(x)` by the three-term recurrence.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for j in 2..=n {
        let j = j as f64;
        let p2 = ((2.0 * j - 1.0) * x * p1 - (j - 1.0) * p0) / j;
        p0 = p1;
        p1 = p2;
    }
    // P_n'(x) = n (x P_n - P_{n-1}) / (x^2 - 1)
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Tensor product of two 1D rules: Cartesian nodes with product weights.
#[derive(Debug, Clone)]
pub struct TensorRule2d {
    points: Vec<(f64, f64, f64)>,
    rule_x: QuadratureRule,
    rule_y: QuadratureRule,
}

impl TensorRule2d {
    pub fn new(rule_x: QuadratureRule, rule_y: QuadratureRule) -> Result<Self> {
        if rule_x.is_empty() || rule_y.is_empty() {
            return Err(Error::contract("tensor product of an empty rule"));
        }
        let mut points = Vec::with_capacity(rule_x.len() * rule_y.len());
        for (&x, &wx) in rule_x.nodes().iter().zip(rule_x.weights()) {
            for (&y, &wy) in rule_y.nodes().iter().zip(rule_y.weights()) {
                points.push((x, y, wx * wy));
            }
        }
        Ok(Self {
            points,
            rule_x,
            rule_y,
        })
    }

    /// `(x, y, weight)` triples in x-major order.
    pub fn points(&self) -> &[(f64, f64, f64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn rule_x(&self) -> &QuadratureRule {
        &self.rule_x
    }

    pub fn rule_y(&self) -> &QuadratureRule {
        &self.rule_y
    }

    pub fn integrate(&self, mut f: impl FnMut(f64, f64) -> f64) -> f64 {
        self.points.iter().map(|&(x, y, w)| w * f(x, y)).sum()
    }
}
