//! Fixed-node quadrature rules.
//!
//! Gauss–Legendre and Gauss–Hermite nodes come from `gauss-quad`; this module
//! only maps them onto intervals, builds composite rules and supplies
//! quasi-random point sets for multi-dimensional averages.

use std::num::NonZeroUsize;

use gauss_quad::{GaussHermite, GaussLegendre};

use crate::error::{Error, Result};

/// A set of nodes with weights. For rules over a probability law the
/// weights sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

fn nonzero(n: usize) -> Result<NonZeroUsize> {
    NonZeroUsize::new(n).ok_or_else(|| Error::InvalidArgument("quadrature order must be positive".into()))
}

/// `n`-point Gauss–Legendre rule mapped onto `[a, b]`.
pub fn legendre(n: usize, a: f64, b: f64) -> Result<Rule> {
    let gl = GaussLegendre::new(nonzero(n)?);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let (nodes, weights) = gl
        .iter()
        .map(|(x, w)| (mid + half * x, half * w))
        .unzip();
    Ok(Rule { nodes, weights })
}

/// Composite Gauss–Legendre over `[a, b]`: `panels` equal panels with
/// `per_panel` nodes each.
pub fn composite_legendre(a: f64, b: f64, panels: usize, per_panel: usize) -> Result<Rule> {
    if panels == 0 {
        return Err(Error::InvalidArgument("panel count must be positive".into()));
    }
    let base = legendre(per_panel, -1.0, 1.0)?;
    let h = (b - a) / panels as f64;
    let mut nodes = Vec::with_capacity(panels * per_panel);
    let mut weights = Vec::with_capacity(panels * per_panel);
    for p in 0..panels {
        let lo = a + h * p as f64;
        let mid = lo + 0.5 * h;
        for (x, w) in base.nodes.iter().zip(&base.weights) {
            nodes.push(mid + 0.5 * h * x);
            weights.push(0.5 * h * w);
        }
    }
    Ok(Rule { nodes, weights })
}

/// Gauss–Hermite rule for `∫ e^{-t²} g(t) dt`.
#[derive(Debug, Clone)]
pub struct HermiteRule {
    pub order: usize,
    pairs: Vec<(f64, f64)>,
}

impl HermiteRule {
    pub fn new(order: usize) -> Result<Self> {
        let gh = GaussHermite::new(nonzero(order)?);
        Ok(Self {
            order,
            pairs: gh.iter().map(|(x, w)| (*x, *w)).collect(),
        })
    }

    /// `E[g(Y)]` for `Y ~ N(mean, var)`, via `y = mean + sqrt(2 var) t`.
    pub fn normal_expectation(&self, mean: f64, var: f64, mut g: impl FnMut(f64) -> f64) -> f64 {
        let scale = (2.0 * var).sqrt();
        let s: f64 = self
            .pairs
            .iter()
            .map(|&(t, w)| w * g(mean + scale * t))
            .sum();
        s / std::f64::consts::PI.sqrt()
    }
}

/// Radical-inverse (Halton) point `index` in `[0,1)^dim`, bases from the
/// first `dim` primes.
pub fn halton_point(index: u64, dim: usize) -> Vec<f64> {
    const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];
    assert!(dim <= PRIMES.len(), "halton sequence supports at most 16 dimensions");
    PRIMES[..dim]
        .iter()
        .map(|&base| {
            let mut i = index;
            let mut f = 1.0;
            let mut r = 0.0;
            while i > 0 {
                f /= base as f64;
                r += f * (i % base) as f64;
                i /= base;
            }
            r
        })
        .collect()
}
