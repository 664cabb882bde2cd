//! A small fixed-size jet over two variables, used to evaluate closed-form
//! solutions together with their first and second partials. Keeps the
//! residual-identity checks independent of the batched engine.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Second-order jet in at most two variables: value, gradient `(d0, d1)` and
/// symmetric Hessian `(d00, d01, d11)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarJet {
    pub v: f64,
    pub d: [f64; 2],
    pub dd: [f64; 3],
}

impl ScalarJet {
    pub fn constant(v: f64) -> Self {
        Self {
            v,
            d: [0.0; 2],
            dd: [0.0; 3],
        }
    }

    /// Seeds variable `index` (0 or 1).
    pub fn var(v: f64, index: usize) -> Self {
        let mut d = [0.0; 2];
        d[index] = 1.0;
        Self { v, d, dd: [0.0; 3] }
    }

    pub fn value(self) -> f64 {
        self.v
    }

    pub fn dx(self) -> f64 {
        self.d[0]
    }

    pub fn dy(self) -> f64 {
        self.d[1]
    }

    pub fn dxx(self) -> f64 {
        self.dd[0]
    }

    pub fn dxy(self) -> f64 {
        self.dd[1]
    }

    pub fn dyy(self) -> f64 {
        self.dd[2]
    }

    /// Chain rule through a scalar function given `f(v)`, `f'(v)`, `f''(v)`.
    fn lift(self, f: f64, df: f64, ddf: f64) -> Self {
        let mut out = Self::constant(f);
        for k in 0..2 {
            out.d[k] = df * self.d[k];
        }
        let pairs = [(0, 0), (0, 1), (1, 1)];
        for (n, (i, j)) in pairs.into_iter().enumerate() {
            out.dd[n] = ddf * self.d[i] * self.d[j] + df * self.dd[n];
        }
        out
    }

    pub fn sin(self) -> Self {
        self.lift(self.v.sin(), self.v.cos(), -self.v.sin())
    }

    pub fn cos(self) -> Self {
        self.lift(self.v.cos(), -self.v.sin(), -self.v.cos())
    }

    pub fn exp(self) -> Self {
        let e = self.v.exp();
        self.lift(e, e, e)
    }

    pub fn recip(self) -> Self {
        let r = 1.0 / self.v;
        self.lift(r, -r * r, 2.0 * r * r * r)
    }

    pub fn powi(self, n: i32) -> Self {
        let f = self.v.powi(n);
        let df = n as f64 * self.v.powi(n - 1);
        let ddf = (n * (n - 1)) as f64 * self.v.powi(n - 2);
        self.lift(f, df, ddf)
    }
}

impl Add for ScalarJet {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self {
            v: self.v + rhs.v,
            d: [self.d[0] + rhs.d[0], self.d[1] + rhs.d[1]],
            dd: [
                self.dd[0] + rhs.dd[0],
                self.dd[1] + rhs.dd[1],
                self.dd[2] + rhs.dd[2],
            ],
        }
    }
}

impl Sub for ScalarJet {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self + (-rhs)
    }
}

impl Neg for ScalarJet {
    type Output = Self;
    fn neg(self) -> Self {
        Self {
            v: -self.v,
            d: [-self.d[0], -self.d[1]],
            dd: [-self.dd[0], -self.dd[1], -self.dd[2]],
        }
    }
}

impl Mul for ScalarJet {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let mut out = Self::constant(self.v * rhs.v);
        for k in 0..2 {
            out.d[k] = self.d[k] * rhs.v + self.v * rhs.d[k];
        }
        let pairs = [(0, 0), (0, 1), (1, 1)];
        for (n, (i, j)) in pairs.into_iter().enumerate() {
            out.dd[n] = self.dd[n] * rhs.v
                + self.d[i] * rhs.d[j]
                + self.d[j] * rhs.d[i]
                + self.v * rhs.dd[n];
        }
        out
    }
}

impl Div for ScalarJet {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        self * rhs.recip()
    }
}

impl Add<f64> for ScalarJet {
    type Output = Self;
    fn add(self, rhs: f64) -> Self {
        self + Self::constant(rhs)
    }
}

impl Sub<f64> for ScalarJet {
    type Output = Self;
    fn sub(self, rhs: f64) -> Self {
        self - Self::constant(rhs)
    }
}

impl Mul<f64> for ScalarJet {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        self * Self::constant(rhs)
    }
}

impl Mul<ScalarJet> for f64 {
    type Output = ScalarJet;
    fn mul(self, rhs: ScalarJet) -> ScalarJet {
        ScalarJet::constant(self) * rhs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn product_rule_on_x_times_y() {
        let x = ScalarJet::var(3.0, 0);
        let y = ScalarJet::var(5.0, 1);
        let p = x * y;
        close(p.value(), 15.0);
        close(p.dx(), 5.0);
        close(p.dy(), 3.0);
        close(p.dxy(), 1.0);
        close(p.dxx(), 0.0);
    }

    #[test]
    fn sin_of_product_second_partials() {
        // f = sin(x y): fx = y cos, fxx = -y^2 sin, fxy = cos - xy sin.
        let (xv, yv) = (0.7, -0.4);
        let x = ScalarJet::var(xv, 0);
        let y = ScalarJet::var(yv, 1);
        let f = (x * y).sin();
        close(f.value(), (xv * yv).sin());
        close(f.dx(), yv * (xv * yv).cos());
        close(f.dxx(), -yv * yv * (xv * yv).sin());
        close(f.dxy(), (xv * yv).cos() - xv * yv * (xv * yv).sin());
        close(f.dyy(), -xv * xv * (xv * yv).sin());
    }

    #[test]
    fn quotient_second_derivative() {
        // f = 1/y: fyy = 2/y^3.
        let y = ScalarJet::var(2.0, 1);
        let f = ScalarJet::constant(1.0) / y;
        close(f.value(), 0.5);
        close(f.dy(), -0.25);
        close(f.dyy(), 0.25);
    }

    #[test]
    fn constants_carry_no_partials() {
        let c = ScalarJet::constant(4.2);
        let f = c.sin() * c + c.exp();
        close(f.dx(), 0.0);
        close(f.dyy(), 0.0);
    }
}
