//! Order-`q` B-spline bases on `[0,1]` with `K` equal subintervals.
//!
//! The knot vector is clamped: `q`-fold knots at 0 and 1 and single interior
//! knots at `k/K`. Subintervals are half-open on the left, `((k-1)/K, k/K]`,
//! with `x = 0` assigned to the first one, so order-1 bases are the
//! indicators of `[0, 1/K], (1/K, 2/K], …`. The basis has `J = q + K - 1`
//! functions which are nonnegative, sum to one, have support of length at
//! most `q/K`, and at most `q` of which are nonzero at any point.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::design::{CovariateLaw, DesignSpec};
use crate::error::{Error, Result};
use crate::quadrature::legendre;
use crate::sparse::BandedRows;

/// Points in the uniform grid used for sup-norm errors.
pub const SUP_GRID: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis {
    order: usize,
    intervals: usize,
    knots: Vec<f64>,
}

impl SplineBasis {
    pub fn new(order: usize, intervals: usize) -> Result<Self> {
        if order < 1 {
            return Err(Error::InvalidArgument(format!("spline order must be >= 1, got {order}")));
        }
        if intervals < 1 {
            return Err(Error::InvalidArgument(format!(
                "subinterval count must be >= 1, got {intervals}"
            )));
        }
        let mut knots = Vec::with_capacity(2 * order + intervals - 1);
        knots.extend(std::iter::repeat_n(0.0, order - 1));
        knots.extend((0..=intervals).map(|k| Self::breakpoint(k, intervals)));
        knots.extend(std::iter::repeat_n(1.0, order - 1));
        Ok(Self {
            order,
            intervals,
            knots,
        })
    }

    /// Basis of order `q` with `J` functions (`K = J - q + 1`).
    pub fn with_dim(order: usize, dim: usize) -> Result<Self> {
        if dim < order {
            return Err(Error::InvalidArgument(format!(
                "basis dimension {dim} is below the order {order}"
            )));
        }
        Self::new(order, dim - order + 1)
    }

    fn breakpoint(k: usize, intervals: usize) -> f64 {
        k as f64 / intervals as f64
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    /// Number of basis functions `J = q + K - 1`.
    pub fn dim(&self) -> usize {
        self.order + self.intervals - 1
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Closed support `[t_j, t_{j+q}]` of basis function `j`.
    pub fn support(&self, j: usize) -> (f64, f64) {
        (self.knots[j], self.knots[j + self.order])
    }

    /// Zero-based subinterval containing `x` under the `((k-1)/K, k/K]`
    /// convention.
    fn interval_of(&self, x: f64) -> usize {
        let kk = self.intervals;
        let mut k = ((x * kk as f64).ceil() as usize).clamp(1, kk) - 1;
        while k > 0 && x <= Self::breakpoint(k, kk) {
            k -= 1;
        }
        while k + 1 < kk && x > Self::breakpoint(k + 1, kk) {
            k += 1;
        }
        k
    }

    /// Writes the `q` possibly-nonzero basis values at `x` into `out` and
    /// returns the index of the first one. `x` must lie in `[0,1]`.
    pub fn eval_local(&self, x: f64, out: &mut [f64]) -> usize {
        let q = self.order;
        debug_assert_eq!(out.len(), q);
        let k = self.interval_of(x);
        let span = k + q - 1;
        let t = &self.knots;
        let mut left = [0.0; 32];
        let mut right = [0.0; 32];
        assert!(q <= 32, "spline order above 32 is not supported");
        out[0] = 1.0;
        for j in 1..q {
            left[j] = x - t[span + 1 - j];
            right[j] = t[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = out[r] / (right[r + 1] + left[j - r]);
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
        k
    }

    fn check_domain(x: f64) -> Result<()> {
        if (0.0..=1.0).contains(&x) {
            Ok(())
        } else {
            Err(Error::Domain { x })
        }
    }

    /// Full weight vector `B(x)` of length `J`.
    pub fn eval(&self, x: f64) -> Result<Vec<f64>> {
        Self::check_domain(x)?;
        let mut local = vec![0.0; self.order];
        let first = self.eval_local(x, &mut local);
        let mut out = vec![0.0; self.dim()];
        out[first..first + self.order].copy_from_slice(&local);
        Ok(out)
    }

    /// `βᵀB(x)`.
    pub fn eval_spline(&self, coeffs: &CoefficientVector, x: f64) -> Result<f64> {
        if coeffs.beta.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: coeffs.beta.len(),
            });
        }
        Self::check_domain(x)?;
        Ok(self.eval_coeffs_unchecked(&coeffs.beta, x))
    }

    pub(crate) fn eval_coeffs_unchecked(&self, beta: &[f64], x: f64) -> f64 {
        let mut local = [0.0; 32];
        let q = self.order;
        let first = self.eval_local(x.clamp(0.0, 1.0), &mut local[..q]);
        local[..q]
            .iter()
            .zip(&beta[first..first + q])
            .map(|(b, c)| b * c)
            .sum()
    }

    /// Basis rows at the given points.
    pub fn rows(&self, xs: &[f64]) -> Result<BandedRows> {
        let mut rows = BandedRows::new(self.dim());
        let mut local = vec![0.0; self.order];
        for &x in xs {
            Self::check_domain(x)?;
            let first = self.eval_local(x, &mut local);
            rows.push_row(first, &local);
        }
        Ok(rows)
    }
}

/// Spline coefficients `β` together with the basis they index.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientVector {
    pub beta: Vec<f64>,
    pub basis: Arc<SplineBasis>,
}

impl CoefficientVector {
    pub fn new(basis: Arc<SplineBasis>, beta: Vec<f64>) -> Result<Self> {
        if beta.len() != basis.dim() {
            return Err(Error::DimensionMismatch {
                expected: basis.dim(),
                got: beta.len(),
            });
        }
        if let Some(b) = beta.iter().find(|b| !b.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite coefficient {b}")));
        }
        Ok(Self { beta, basis })
    }

    pub fn zeros(basis: Arc<SplineBasis>) -> Self {
        let j = basis.dim();
        Self {
            beta: vec![0.0; j],
            basis,
        }
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        self.basis.eval_spline(self, x)
    }
}

/// Quadrature used for Gram matrices over continuous laws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GramQuadrature {
    /// Gauss–Legendre nodes per knot subinterval; must be at least `2q`.
    pub nodes_per_interval: usize,
}

impl GramQuadrature {
    pub fn for_basis(basis: &SplineBasis) -> Self {
        Self {
            nodes_per_interval: 2 * basis.order(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    /// `Σ_ij = ∫ B_i B_j dQ`.
    pub sigma: DMatrix<f64>,
    pub design: DesignSpec,
    /// `None` for empirical designs (exact averaging).
    pub quadrature: Option<GramQuadrature>,
    /// Set when Σ is numerically singular, e.g. all design points equal.
    pub degenerate: bool,
}

/// Rule aligned with the knots: `per_interval` Gauss–Legendre nodes on each of
/// `K·split` equal panels, weighted by the covariate density.
fn knot_aligned_rule(
    basis: &SplineBasis,
    design: &DesignSpec,
    split: usize,
    per_interval: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    match design {
        DesignSpec::Random {
            law: CovariateLaw::Uniform { dim },
        } if *dim != 1 => {
            return Err(Error::InvalidArgument(format!(
                "spline bases are one-dimensional; design has dimension {dim}"
            )))
        }
        DesignSpec::Fixed { .. } => unreachable!("empirical designs are averaged exactly"),
        _ => {}
    }
    let panels = basis.intervals() * split;
    let base = legendre(per_interval, -1.0, 1.0)?;
    let h = 1.0 / panels as f64;
    let mut xs = Vec::with_capacity(panels * per_interval);
    let mut ws = Vec::with_capacity(panels * per_interval);
    for p in 0..panels {
        let mid = (p as f64 + 0.5) * h;
        for (t, w) in base.nodes.iter().zip(&base.weights) {
            let x = mid + 0.5 * h * t;
            xs.push(x);
            ws.push(0.5 * h * w * design.density_1d(x));
        }
    }
    Ok((xs, ws))
}

fn design_points_1d(design: &DesignSpec) -> Result<Vec<f64>> {
    let DesignSpec::Fixed { points } = design else {
        unreachable!()
    };
    if points.iter().any(|p| p.len() != 1) {
        return Err(Error::InvalidArgument(
            "spline bases are one-dimensional; design points must have one coordinate".into(),
        ));
    }
    Ok(points.iter().map(|p| p[0]).collect())
}

/// Gram matrix `Σ = (∫ B_i B_j dQ)`. Continuous laws use Gauss–Legendre on
/// each knot subinterval; empirical designs average exactly over the points.
pub fn gram_matrix(
    basis: &SplineBasis,
    design: &DesignSpec,
    quad: Option<GramQuadrature>,
) -> Result<GramMatrix> {
    design.validate()?;
    let (sigma, quadrature) = if design.is_fixed() {
        let xs = design_points_1d(design)?;
        let rows = basis.rows(&xs)?;
        let w = vec![1.0 / xs.len() as f64; xs.len()];
        (rows.weighted_gram(&w), None)
    } else {
        let quad = quad.unwrap_or_else(|| GramQuadrature::for_basis(basis));
        if quad.nodes_per_interval < 2 * basis.order() {
            return Err(Error::InvalidArgument(format!(
                "need at least {} quadrature nodes per subinterval, got {}",
                2 * basis.order(),
                quad.nodes_per_interval
            )));
        }
        let (xs, ws) = knot_aligned_rule(basis, design, 1, quad.nodes_per_interval)?;
        let rows = basis.rows(&xs)?;
        (rows.weighted_gram(&ws), Some(quad))
    };
    let sigma = 0.5 * (&sigma + sigma.transpose());
    let eig = SymmetricEigen::new(sigma.clone());
    let lmax = eig.eigenvalues.max();
    let lmin = eig.eigenvalues.min();
    Ok(GramMatrix {
        sigma,
        design: design.clone(),
        quadrature,
        degenerate: lmin <= 1e-12 * lmax.abs().max(f64::MIN_POSITIVE),
    })
}

/// `(J λ_min(Σ), J λ_max(Σ))`. Regularity of the design means both stay
/// bounded away from 0 and ∞ as `J` grows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GramRegularity {
    pub c_lower: f64,
    pub c_upper: f64,
}

pub fn check_gram_regularity(gram: &GramMatrix) -> GramRegularity {
    let j = gram.sigma.nrows() as f64;
    let eig = SymmetricEigen::new(gram.sigma.clone());
    GramRegularity {
        c_lower: j * eig.eigenvalues.min().max(0.0),
        c_upper: j * eig.eigenvalues.max(),
    }
}

/// Solves the SPD system, adding a ridge `1e-12·tr(Σ)/J` (escalated ×10 on
/// failure) when the plain Cholesky factorization breaks down.
pub(crate) fn solve_spd_with_ridge(sigma: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    if let Some(ch) = sigma.clone().cholesky() {
        let sol = ch.solve(rhs);
        if sol.iter().all(|v| v.is_finite()) {
            return Ok((sol, 0.0));
        }
    }
    let j = sigma.nrows() as f64;
    let mut ridge = 1e-12 * sigma.trace().abs().max(f64::MIN_POSITIVE) / j;
    for _ in 0..12 {
        let mut m = sigma.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += ridge;
        }
        if let Some(ch) = m.cholesky() {
            return Ok((ch.solve(rhs), ridge));
        }
        ridge *= 10.0;
    }
    Err(Error::Factorization { jitter: ridge })
}

/// Quadrature for projections: each knot subinterval is split into enough
/// panels to reach `min_panels` overall, `2q` (at least 8) nodes per panel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionQuadrature {
    pub min_panels: usize,
}

impl Default for ProjectionQuadrature {
    fn default() -> Self {
        Self { min_panels: 8192 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub coeffs: CoefficientVector,
    /// Max of `|g_β - target|` over a 10⁴-point uniform grid.
    pub sup_error: f64,
    /// `‖g_β - target‖` in `L²(Q)`.
    pub l2_error: f64,
    /// Ridge added to Σ before solving; 0 when none was needed.
    pub jitter: f64,
}

/// `L²(Q)` projection of `target` onto the spline space.
pub fn project(
    basis: &Arc<SplineBasis>,
    target: &dyn Fn(f64) -> f64,
    design: &DesignSpec,
) -> Result<Projection> {
    project_with(basis, target, design, ProjectionQuadrature::default())
}

pub fn project_with(
    basis: &Arc<SplineBasis>,
    target: &dyn Fn(f64) -> f64,
    design: &DesignSpec,
    quad: ProjectionQuadrature,
) -> Result<Projection> {
    design.validate()?;
    let (xs, ws) = if design.is_fixed() {
        let xs = design_points_1d(design)?;
        let w = vec![1.0 / xs.len() as f64; xs.len()];
        (xs, w)
    } else {
        let split = quad.min_panels.div_ceil(basis.intervals()).max(1);
        let nodes = (2 * basis.order()).max(8);
        knot_aligned_rule(basis, design, split, nodes)?
    };
    let rows = basis.rows(&xs)?;
    let tv: Vec<f64> = xs.iter().map(|&x| target(x)).collect();
    let sigma = rows.weighted_gram(&ws);
    let rhs = rows.weighted_rhs(&ws, &tv);
    let (beta, jitter) = solve_spd_with_ridge(&sigma, &rhs)?;
    let coeffs = CoefficientVector::new(basis.clone(), beta.iter().copied().collect())?;

    let fitted = rows.mul(&coeffs.beta);
    let l2_error = fitted
        .iter()
        .zip(&tv)
        .zip(&ws)
        .map(|((a, b), w)| w * (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let sup_error = (0..SUP_GRID)
        .map(|i| {
            let x = i as f64 / (SUP_GRID - 1) as f64;
            (basis.eval_coeffs_unchecked(&coeffs.beta, x) - target(x)).abs()
        })
        .fold(0.0, f64::max);
    Ok(Projection {
        coeffs,
        sup_error,
        l2_error,
        jitter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn dimension_formula() {
        assert_eq!(SplineBasis::new(1, 2).unwrap().dim(), 2);
        assert_eq!(SplineBasis::new(4, 5).unwrap().dim(), 8);
        assert_eq!(SplineBasis::new(2, 1).unwrap().dim(), 2);
        assert_eq!(SplineBasis::with_dim(3, 7).unwrap().intervals(), 5);
    }

    #[test]
    fn invalid_order_or_intervals() {
        assert!(matches!(SplineBasis::new(0, 3), Err(Error::InvalidArgument(_))));
        assert!(matches!(SplineBasis::new(2, 0), Err(Error::InvalidArgument(_))));
        assert!(SplineBasis::with_dim(4, 3).is_err());
    }

    #[test]
    fn order_one_indicators_are_left_open() {
        let b = SplineBasis::new(1, 2).unwrap();
        assert_eq!(b.eval(0.0).unwrap(), vec![1.0, 0.0]);
        assert_eq!(b.eval(0.5).unwrap(), vec![1.0, 0.0]);
        assert_eq!(b.eval(0.5000001).unwrap(), vec![0.0, 1.0]);
        assert_eq!(b.eval(1.0).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn hat_pair() {
        let b = SplineBasis::new(2, 1).unwrap();
        let v = b.eval(0.25).unwrap();
        assert_abs_diff_eq!(v[0], 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(v[1], 0.25, epsilon = 1e-15);
        for x in [0.0, 0.1, 0.7, 1.0] {
            let v = b.eval(x).unwrap();
            assert_abs_diff_eq!(v[0], 1.0 - x, epsilon = 1e-15);
            assert_abs_diff_eq!(v[1], x, epsilon = 1e-15);
        }
    }

    #[test]
    fn quadratic_at_interior_knot_has_order_nonzeros() {
        let b = SplineBasis::new(3, 4).unwrap();
        let v = b.eval(0.5).unwrap();
        assert_eq!(v.iter().filter(|&&w| w != 0.0).count(), 2);
        // 0.5 is a knot, where a quadratic B-spline vanishes; just off it
        // three functions are active.
        let v = b.eval(0.51).unwrap();
        assert_eq!(v.iter().filter(|&&w| w > 0.0).count(), 3);
    }

    #[test]
    fn domain_and_dimension_errors() {
        let b = Arc::new(SplineBasis::new(2, 3).unwrap());
        assert!(matches!(b.eval(-0.1), Err(Error::Domain { .. })));
        assert!(matches!(b.eval(1.1), Err(Error::Domain { .. })));
        let c = CoefficientVector {
            beta: vec![1.0; 3],
            basis: b.clone(),
        };
        assert!(matches!(b.eval_spline(&c, 0.5), Err(Error::DimensionMismatch { .. })));
        assert!(CoefficientVector::new(b.clone(), vec![f64::NAN; 4]).is_err());
    }

    #[test]
    fn spline_values() {
        let b = Arc::new(SplineBasis::new(2, 1).unwrap());
        let c = CoefficientVector::new(b.clone(), vec![0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(c.eval(0.25).unwrap(), 0.25, epsilon = 1e-15);
        let b4 = Arc::new(SplineBasis::new(4, 6).unwrap());
        let ones = CoefficientVector::new(b4.clone(), vec![1.0; 9]).unwrap();
        let zeros = CoefficientVector::zeros(b4.clone());
        for i in 0..=50 {
            let x = i as f64 / 50.0;
            assert_abs_diff_eq!(ones.eval(x).unwrap(), 1.0, epsilon = 1e-14);
            assert_eq!(zeros.eval(x).unwrap(), 0.0);
        }
    }

    #[test]
    fn gram_of_disjoint_indicators() {
        let b = SplineBasis::new(1, 2).unwrap();
        let g = gram_matrix(&b, &DesignSpec::uniform(1), None).unwrap();
        assert_abs_diff_eq!(g.sigma[(0, 0)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(g.sigma[(1, 1)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(g.sigma[(0, 1)], 0.0, epsilon = 1e-15);
        let r = check_gram_regularity(&g);
        assert_abs_diff_eq!(r.c_lower, 1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(r.c_upper, 1.0, epsilon = 1e-13);
    }

    #[test]
    fn gram_of_hat_pair() {
        let b = SplineBasis::new(2, 1).unwrap();
        let g = gram_matrix(&b, &DesignSpec::uniform(1), None).unwrap();
        let want = [[1.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 1.0 / 3.0]];
        for (i, row) in want.iter().enumerate() {
            for (j, &w) in row.iter().enumerate() {
                assert_abs_diff_eq!(g.sigma[(i, j)], w, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn gram_total_mass_is_one() {
        for (q, k) in [(1, 5), (2, 3), (3, 7), (4, 9)] {
            let b = SplineBasis::new(q, k).unwrap();
            let g = gram_matrix(&b, &DesignSpec::uniform(1), None).unwrap();
            assert_abs_diff_eq!(g.sigma.sum(), 1.0, epsilon = 1e-13);
            assert!(!g.degenerate);
            for i in 0..b.dim() {
                let row: f64 = g.sigma.row(i).sum();
                assert!(row > 0.0 && row <= 1.0 + 1e-14);
                // row sums are ∫B_i dQ = (t_{i+q} - t_i)/q for uniform Q
                let (lo, hi) = b.support(i);
                assert_abs_diff_eq!(row, (hi - lo) / q as f64, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn order_one_uniform_regularity_is_exactly_one() {
        for k in [1, 3, 10, 25] {
            let b = SplineBasis::new(1, k).unwrap();
            let r = check_gram_regularity(&gram_matrix(&b, &DesignSpec::uniform(1), None).unwrap());
            assert_abs_diff_eq!(r.c_lower, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(r.c_upper, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn repeated_design_point_is_degenerate() {
        let b = SplineBasis::new(2, 3).unwrap();
        let d = DesignSpec::fixed_1d(&[0.4; 10]).unwrap();
        let g = gram_matrix(&b, &d, None).unwrap();
        assert!(g.degenerate);
        assert!(check_gram_regularity(&g).c_lower.abs() < 1e-12);
    }

    #[test]
    fn too_few_gram_nodes_rejected() {
        let b = SplineBasis::new(3, 2).unwrap();
        let quad = GramQuadrature {
            nodes_per_interval: 5,
        };
        assert!(gram_matrix(&b, &DesignSpec::uniform(1), Some(quad)).is_err());
        assert!(gram_matrix(&b, &DesignSpec::uniform(2), None).is_err());
    }

    #[test]
    fn projection_reproduces_constants_and_lines() {
        let b = Arc::new(SplineBasis::new(3, 4).unwrap());
        let p = project(&b, &|_| 2.5, &DesignSpec::uniform(1)).unwrap();
        for c in &p.coeffs.beta {
            assert_abs_diff_eq!(*c, 2.5, epsilon = 1e-10);
        }
        assert!(p.sup_error < 1e-10 && p.l2_error < 1e-10);

        let hat = Arc::new(SplineBasis::new(2, 1).unwrap());
        let p = project(&hat, &|x| x, &DesignSpec::uniform(1)).unwrap();
        assert_abs_diff_eq!(p.coeffs.beta[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.coeffs.beta[1], 1.0, epsilon = 1e-12);
        assert!(p.sup_error < 1e-10);
        assert_eq!(p.jitter, 0.0);
    }

    #[test]
    fn projection_on_empirical_design() {
        let b = Arc::new(SplineBasis::new(2, 2).unwrap());
        let d = DesignSpec::equispaced(20);
        let p = project(&b, &|x| 1.0 - 2.0 * x, &d).unwrap();
        assert!(p.sup_error < 1e-10);
    }

    #[test]
    fn singular_projection_reports_ridge() {
        let b = Arc::new(SplineBasis::new(2, 3).unwrap());
        let d = DesignSpec::fixed_1d(&[0.5; 4]).unwrap();
        let p = project(&b, &|_| 1.0, &d).unwrap();
        assert!(p.jitter > 0.0);
        assert!(p.l2_error < 1e-6);
    }
}
