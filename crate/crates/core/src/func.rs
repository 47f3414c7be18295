//! Function handles for mean and log-variance functions.
//!
//! A [`Func`] is evaluated lazily at points of `[0,1]^d`; spline and grid
//! representations use the first coordinate only.

use std::fmt;
use std::sync::Arc;

use crate::spline::{CoefficientVector, SplineBasis};

#[derive(Clone)]
pub struct Analytic {
    pub label: String,
    f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl Analytic {
    pub fn new(label: impl Into<String>, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            label: label.into(),
            f: Arc::new(f),
        }
    }
}

impl fmt::Debug for Analytic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Analytic({})", self.label)
    }
}

#[derive(Debug, Clone)]
pub enum Func {
    Constant(f64),
    Spline(CoefficientVector),
    /// Piecewise-linear interpolation of `values` at increasing `knots`,
    /// held constant outside the knot range.
    Grid { knots: Vec<f64>, values: Vec<f64> },
    Analytic(Analytic),
}

impl Func {
    pub fn analytic(label: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Func::Analytic(Analytic::new(label, move |x: &[f64]| f(x[0])))
    }

    pub fn spline(basis: Arc<SplineBasis>, beta: Vec<f64>) -> crate::Result<Self> {
        Ok(Func::Spline(CoefficientVector::new(basis, beta)?))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Func::Constant(c) => *c,
            Func::Spline(c) => c.basis.eval_coeffs_unchecked(&c.beta, x[0]),
            Func::Grid { knots, values } => interpolate(knots, values, x[0]),
            Func::Analytic(a) => (a.f)(x),
        }
    }

    pub fn eval1(&self, x: f64) -> f64 {
        self.eval(&[x])
    }

    /// Short tag describing the representation.
    pub fn representation(&self) -> &'static str {
        match self {
            Func::Constant(_) => "constant",
            Func::Spline(_) => "spline",
            Func::Grid { .. } => "grid",
            Func::Analytic(_) => "analytic",
        }
    }

    /// Max of `|g|` over `m` equispaced points of `[0,1]`.
    pub fn sup_on_grid(&self, m: usize) -> f64 {
        (0..m)
            .map(|i| self.eval1(i as f64 / (m - 1).max(1) as f64).abs())
            .fold(0.0, f64::max)
    }
}

pub fn interpolate(knots: &[f64], values: &[f64], x: f64) -> f64 {
    let n = knots.len();
    if x <= knots[0] {
        return values[0];
    }
    if x >= knots[n - 1] {
        return values[n - 1];
    }
    let i = knots.partition_point(|&k| k <= x).min(n - 1);
    let (x0, x1) = (knots[i - 1], knots[i]);
    let t = (x - x0) / (x1 - x0);
    values[i - 1] + t * (values[i] - values[i - 1])
}

/// A parameter `θ = (η, f)` with variance `V = exp(f)`.
#[derive(Debug, Clone)]
pub struct FunctionPair {
    pub eta: Func,
    pub f: Func,
}

impl FunctionPair {
    pub fn new(eta: Func, f: Func) -> Self {
        Self { eta, f }
    }

    /// Constant mean `eta` and constant variance `v > 0`.
    pub fn constant(eta: f64, v: f64) -> Self {
        assert!(v > 0.0, "variance must be positive");
        Self {
            eta: Func::Constant(eta),
            f: Func::Constant(v.ln()),
        }
    }

    pub fn mean(&self, x: &[f64]) -> f64 {
        self.eta.eval(x)
    }

    pub fn log_variance(&self, x: &[f64]) -> f64 {
        self.f.eval(x)
    }

    pub fn variance(&self, x: &[f64]) -> f64 {
        self.f.eval(x).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_interpolation() {
        let g = Func::Grid {
            knots: vec![0.0, 0.5, 1.0],
            values: vec![0.0, 1.0, 3.0],
        };
        assert_eq!(g.eval1(0.25), 0.5);
        assert_eq!(g.eval1(0.75), 2.0);
        assert_eq!(g.eval1(1.0), 3.0);
        assert_eq!(g.eval1(0.5), 1.0);
    }

    #[test]
    fn representations_and_variance() {
        let p = FunctionPair::constant(1.0, 4.0);
        assert!((p.variance(&[0.3]) - 4.0).abs() < 1e-14);
        assert_eq!(p.eta.representation(), "constant");
        let a = Func::analytic("sq", |x| x * x);
        assert_eq!(a.eval1(0.5), 0.25);
        assert_eq!(a.representation(), "analytic");
        assert_eq!(format!("{a:?}"), "Analytic(Analytic(sq))");
    }
}
