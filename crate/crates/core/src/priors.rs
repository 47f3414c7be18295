//! Priors on the mean and log-variance functions, and the rate and
//! dimension schedules attached to them.
//!
//! * spline coefficients: i.i.d. standard normal, or the exponential-power
//!   law with density `∝ exp(-|β|^ρ)` (ρ > 1), optionally with a geometric
//!   number of basis functions;
//! * the squared-exponential field rescaled by a random `A` with
//!   `A^d ~ Gamma(a, b)`;
//! * `k`-fold integrated Brownian motion released by an independent
//!   polynomial `Σ_{i=0}^{k} Z_i x^i / i!`.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng as _;
use rand_distr::{Distribution, Gamma, Geometric, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::spline::{CoefficientVector, SplineBasis};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CoefficientLaw {
    StandardNormal,
    /// Density `exp(-|β|^ρ) / (2Γ(1 + 1/ρ))`, so `Pr(|β| > M) ≤ e^{-M^ρ}`
    /// up to a constant.
    Generalized { rho: f64 },
}

impl CoefficientLaw {
    pub fn validate(&self) -> Result<()> {
        match self {
            CoefficientLaw::StandardNormal => Ok(()),
            CoefficientLaw::Generalized { rho } if *rho > 1.0 && rho.is_finite() => Ok(()),
            CoefficientLaw::Generalized { rho } => Err(Error::InvalidArgument(format!(
                "generalized coefficient law needs rho > 1, got {rho}"
            ))),
        }
    }

    /// Tail exponent ρ of the law (2 for the normal).
    pub fn tail_exponent(&self) -> f64 {
        match self {
            CoefficientLaw::StandardNormal => 2.0,
            CoefficientLaw::Generalized { rho } => *rho,
        }
    }

    pub fn log_density(&self, b: f64) -> f64 {
        match self {
            CoefficientLaw::StandardNormal => -0.5 * (LN_2PI + b * b),
            CoefficientLaw::Generalized { rho } => {
                -b.abs().powf(*rho) - (2.0f64.ln() + ln_gamma(1.0 + 1.0 / rho))
            }
        }
    }

    /// Exact `Pr(|β| > m)`.
    pub fn tail_probability(&self, m: f64) -> f64 {
        match self {
            CoefficientLaw::StandardNormal => statrs::function::erf::erfc(m / std::f64::consts::SQRT_2),
            CoefficientLaw::Generalized { rho } => gamma_ur(1.0 / rho, m.max(0.0).powf(*rho)),
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        match self {
            CoefficientLaw::StandardNormal => StandardNormal.sample(rng),
            CoefficientLaw::Generalized { rho } => {
                // |β|^ρ ~ Gamma(1/ρ, 1)
                let g: f64 = Gamma::new(1.0 / rho, 1.0).expect("valid gamma").sample(rng);
                let mag = g.powf(1.0 / rho);
                if rng.random::<bool>() {
                    mag
                } else {
                    -mag
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DimensionLaw {
    Fixed { dim: usize },
    /// `Pr(J = k) = p^{k-1}(1-p)`, `k ≥ 1`.
    Geometric { p: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplinePriorConfig {
    pub coefficient_law: CoefficientLaw,
    pub dimension_law: DimensionLaw,
}

impl SplinePriorConfig {
    pub fn normal(dim: usize) -> Self {
        Self {
            coefficient_law: CoefficientLaw::StandardNormal,
            dimension_law: DimensionLaw::Fixed { dim },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.coefficient_law.validate()?;
        match self.dimension_law {
            DimensionLaw::Fixed { dim } if dim >= 1 => Ok(()),
            DimensionLaw::Fixed { .. } => Err(Error::InvalidArgument("fixed dimension must be >= 1".into())),
            DimensionLaw::Geometric { p } if p > 0.0 && p < 1.0 => Ok(()),
            DimensionLaw::Geometric { p } => Err(Error::InvalidArgument(format!(
                "geometric dimension law needs p in (0,1), got {p}"
            ))),
        }
    }

    /// Joint log-density of i.i.d. coefficients.
    pub fn log_density(&self, beta: &[f64]) -> f64 {
        beta.iter().map(|&b| self.coefficient_law.log_density(b)).sum()
    }
}

/// Draws i.i.d. coefficients for a fixed-dimension prior on `basis`.
pub fn sample_spline_prior(
    config: &SplinePriorConfig,
    basis: &Arc<SplineBasis>,
    rng: &mut Rng,
) -> Result<CoefficientVector> {
    config.validate()?;
    match config.dimension_law {
        DimensionLaw::Fixed { dim } if dim != basis.dim() => Err(Error::DimensionMismatch {
            expected: dim,
            got: basis.dim(),
        }),
        DimensionLaw::Fixed { .. } => {
            let beta = (0..basis.dim()).map(|_| config.coefficient_law.sample(rng)).collect();
            CoefficientVector::new(basis.clone(), beta)
        }
        DimensionLaw::Geometric { .. } => Err(Error::InvalidArgument(
            "random-dimension priors draw their own basis; use sample_random_dimension_prior".into(),
        )),
    }
}

/// Draws `J` from the dimension law and then `J` coefficients. The basis has
/// order `min(order, J)` and `J - order + 1` subintervals.
pub fn sample_random_dimension_prior(
    config: &SplinePriorConfig,
    order: usize,
    rng: &mut Rng,
) -> Result<CoefficientVector> {
    config.validate()?;
    let dim = match config.dimension_law {
        DimensionLaw::Fixed { dim } => dim,
        DimensionLaw::Geometric { p } => sample_jn_geometric(p, rng)?,
    };
    let basis = Arc::new(SplineBasis::with_dim(order.min(dim), dim)?);
    let beta = (0..dim).map(|_| config.coefficient_law.sample(rng)).collect();
    CoefficientVector::new(basis, beta)
}

/// `J` with `Pr(J = k) = p^{k-1}(1-p)`.
pub fn sample_jn_geometric(p: f64, rng: &mut Rng) -> Result<usize> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!("p must lie in (0,1), got {p}")));
    }
    let failures = Geometric::new(1.0 - p)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?
        .sample(rng);
    Ok(1 + failures as usize)
}

pub fn geometric_pmf(p: f64, k: usize) -> f64 {
    if k == 0 {
        0.0
    } else {
        p.powi(k as i32 - 1) * (1.0 - p)
    }
}

/// Smallest `p` with `p^{k-1}(1-p) = target`, found by bisection to 1e-12.
/// The smaller root keeps `Pr(J > k) = p^k` below the target.
pub fn solve_geometric_p(k: usize, target: f64) -> Result<f64> {
    if k == 0 || !(target > 0.0 && target < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "need k >= 1 and target in (0,1), got k={k}, target={target}"
        )));
    }
    if k == 1 {
        return Ok(1.0 - target);
    }
    let peak = (k - 1) as f64 / k as f64;
    if geometric_pmf(peak, k) < target {
        return Err(Error::InvalidArgument(format!(
            "target {target} exceeds the largest attainable Pr(J = {k})"
        )));
    }
    let (mut lo, mut hi) = (0.0f64, peak);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if geometric_pmf(mid, k) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PriorKind {
    Spline,
    RescaledSe,
    IntegratedBm { k_eta: usize, k_f: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSpec {
    /// Hölder smoothness of the true mean.
    pub alpha: f64,
    /// Hölder smoothness of the true variance.
    pub gamma: f64,
    #[serde(default = "one")]
    pub d: usize,
    pub prior: PriorKind,
}

fn one() -> usize {
    1
}

impl RateSpec {
    pub fn spline(alpha: f64, gamma: f64) -> Self {
        Self {
            alpha,
            gamma,
            d: 1,
            prior: PriorKind::Spline,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.5 && self.alpha.is_finite()) {
            return Err(Error::InvalidSpec(format!("alpha must be >= 1/2, got {}", self.alpha)));
        }
        if !(self.gamma >= 0.5 && self.gamma.is_finite()) {
            return Err(Error::InvalidSpec(format!("gamma must be >= 1/2, got {}", self.gamma)));
        }
        if self.d < 1 {
            return Err(Error::InvalidSpec("dimension d must be >= 1".into()));
        }
        Ok(())
    }
}

fn check_n(n: u64) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("sample size must be >= 2, got {n}")));
    }
    Ok(n as f64)
}

/// `min{(n/log n)^{1/(1+2α)}, n^{1/(2+2γ)}}` before rounding.
pub fn jn_schedule_raw(spec: &RateSpec, n: u64) -> Result<f64> {
    spec.validate()?;
    let nf = check_n(n)?;
    let a = (nf / nf.ln()).powf(1.0 / (1.0 + 2.0 * spec.alpha));
    let b = nf.powf(1.0 / (2.0 + 2.0 * spec.gamma));
    Ok(a.min(b))
}

/// Spline dimension schedule: the raw schedule rounded half-up, at least 1.
pub fn jn_schedule(spec: &RateSpec, n: u64) -> Result<usize> {
    Ok(((jn_schedule_raw(spec, n)? + 0.5).floor() as usize).max(1))
}

/// Dimension cap of the random-dimension sieve: the raw schedule floored.
pub fn kn_cap(spec: &RateSpec, n: u64) -> Result<usize> {
    Ok((jn_schedule_raw(spec, n)?.floor() as usize).max(1))
}

/// Contraction rate `ε_n` for the prior kind in `spec`.
pub fn rate_theoretical(spec: &RateSpec, n: u64) -> Result<f64> {
    spec.validate()?;
    let nf = check_n(n)?;
    let (a, g) = (spec.alpha, spec.gamma);
    Ok(match spec.prior {
        PriorKind::Spline => (nf / nf.ln())
            .powf(-a / (1.0 + 2.0 * a))
            .max(nf.powf(-g / (2.0 + 2.0 * g))),
        PriorKind::RescaledSe => {
            let d = spec.d as f64;
            let term = |k: f64| nf.powf(-k / (d + 2.0 * k)) * nf.ln().powf((d + 1.0) * k / (2.0 * k + d));
            term(a).max(term(g))
        }
        PriorKind::IntegratedBm { k_eta, k_f } => nf
            .powf(-a / (2.0 * k_eta as f64 + 2.0))
            .max(nf.powf(-g / (2.0 * k_f as f64 + 2.0))),
    })
}

/// `J e^{-M²/2}`, the bound on `Pr(sup|Σβ_j B_j| > M)` under normal
/// coefficients.
pub fn coefficient_tail_bound(dim: usize, m: f64) -> f64 {
    coefficient_tail_bound_rho(dim, m, 2.0)
}

/// `J e^{-M^ρ/2}`.
pub fn coefficient_tail_bound_rho(dim: usize, m: f64, rho: f64) -> f64 {
    dim as f64 * (-m.powf(rho) / 2.0).exp()
}

/// `exp(-‖s - t‖²)`.
pub fn se_kernel(s: &[f64], t: &[f64]) -> f64 {
    (-s.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>()).exp()
}

/// Covariance matrix `exp(-A²‖x_i - x_j‖²)` of the field rescaled by `A`.
pub fn se_kernel_matrix(grid: &[Vec<f64>], scale: f64) -> DMatrix<f64> {
    let m = grid.len();
    DMatrix::from_fn(m, m, |i, j| {
        let d2: f64 = grid[i].iter().zip(&grid[j]).map(|(a, b)| (a - b).powi(2)).sum();
        (-scale * scale * d2).exp()
    })
}

pub const JITTER_MAX: f64 = 1e-6;

/// Cholesky factor of `K + jitter·I`, escalating the jitter ×10 from its
/// starting value up to 1e-6.
pub fn cholesky_with_jitter(k: &DMatrix<f64>, start: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let mut jitter = start.max(0.0);
    loop {
        let mut m = k.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        if let Some(ch) = m.cholesky() {
            return Ok((ch, jitter));
        }
        if jitter >= JITTER_MAX {
            return Err(Error::Factorization { jitter });
        }
        jitter = if jitter == 0.0 { 1e-10 } else { (jitter * 10.0).min(JITTER_MAX) };
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GpKind {
    /// `A^d ~ Gamma(shape, rate)`.
    RescaledSe { shape: f64, rate: f64, dim: usize },
    IntegratedBm { k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GPPriorConfig {
    pub kind: GpKind,
    pub grid: Vec<Vec<f64>>,
    pub jitter: f64,
}

impl GPPriorConfig {
    /// Rescaled squared-exponential prior with `Gamma(1, 1)` scale law on a
    /// uniform one-dimensional grid of `m` points.
    pub fn rescaled_se_default(m: usize) -> Self {
        Self {
            kind: GpKind::RescaledSe {
                shape: 1.0,
                rate: 1.0,
                dim: 1,
            },
            grid: uniform_grid(m),
            jitter: 1e-10,
        }
    }

    pub fn integrated_bm(k: usize, m: usize) -> Self {
        Self {
            kind: GpKind::IntegratedBm { k },
            grid: uniform_grid(m),
            jitter: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::InvalidArgument("GP grid is empty".into()));
        }
        if !(self.jitter >= 0.0) {
            return Err(Error::InvalidArgument(format!("jitter must be >= 0, got {}", self.jitter)));
        }
        let d = self.grid[0].len();
        for p in &self.grid {
            if p.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: p.len(),
                });
            }
            if let Some(&x) = p.iter().find(|x| !(0.0..=1.0).contains(*x)) {
                return Err(Error::Domain { x });
            }
        }
        match self.kind {
            GpKind::RescaledSe { shape, rate, dim } => {
                if !(shape > 0.0 && rate > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "gamma shape and rate must be positive, got ({shape}, {rate})"
                    )));
                }
                if dim != d {
                    return Err(Error::DimensionMismatch { expected: dim, got: d });
                }
            }
            GpKind::IntegratedBm { .. } => {
                if d != 1 {
                    return Err(Error::InvalidArgument("integrated Brownian motion is one-dimensional".into()));
                }
                let xs: Vec<f64> = self.grid.iter().map(|p| p[0]).collect();
                if xs[0] != 0.0 || xs.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::InvalidArgument(
                        "integrated Brownian motion needs an increasing grid starting at 0".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// `m` equispaced points `i/(m-1)` of `[0,1]`.
pub fn uniform_grid(m: usize) -> Vec<Vec<f64>> {
    (0..m).map(|i| vec![i as f64 / (m - 1).max(1) as f64]).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SePath {
    pub values: Vec<f64>,
    /// Realized rescaling `A`.
    pub scale: f64,
    /// Jitter actually used in the factorization.
    pub jitter: f64,
}

/// Draws `A` with `A^d ~ Gamma(shape, rate)`.
pub fn sample_se_scale(shape: f64, rate: f64, dim: usize, rng: &mut Rng) -> Result<f64> {
    let g: f64 = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?
        .sample(rng);
    Ok(g.powf(1.0 / dim as f64))
}

/// Grid sample of the rescaled squared-exponential field.
pub fn sample_rescaled_se_path(config: &GPPriorConfig, rng: &mut Rng) -> Result<SePath> {
    config.validate()?;
    let GpKind::RescaledSe { shape, rate, dim } = config.kind else {
        return Err(Error::InvalidArgument("config is not a rescaled squared-exponential prior".into()));
    };
    let scale = sample_se_scale(shape, rate, dim, rng)?;
    sample_se_path_given_scale(&config.grid, scale, config.jitter, rng)
}

/// Grid sample of the field rescaled by a given `A`.
pub fn sample_se_path_given_scale(grid: &[Vec<f64>], scale: f64, jitter: f64, rng: &mut Rng) -> Result<SePath> {
    let k = se_kernel_matrix(grid, scale);
    let (ch, jitter) = cholesky_with_jitter(&k, jitter)?;
    let z = DVector::from_fn(grid.len(), |_, _| StandardNormal.sample(rng));
    let values = (ch.l() * z).iter().copied().collect();
    Ok(SePath { values, scale, jitter })
}

fn cumulative_trapezoid(xs: &[f64], g: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; g.len()];
    for i in 1..g.len() {
        out[i] = out[i - 1] + 0.5 * (xs[i] - xs[i - 1]) * (g[i - 1] + g[i]);
    }
    out
}

/// Path of `I^k W + Σ_{i=0}^{k} Z_i x^i/i!` from standardized Brownian
/// increments (`xs.len() - 1` of them) and release coefficients `z`
/// (`k + 1` of them).
pub fn integrated_bm_from_normals(xs: &[f64], k: usize, increments: &[f64], z: &[f64]) -> Vec<f64> {
    assert_eq!(increments.len() + 1, xs.len());
    assert_eq!(z.len(), k + 1);
    let mut w = vec![0.0; xs.len()];
    for i in 1..xs.len() {
        w[i] = w[i - 1] + (xs[i] - xs[i - 1]).sqrt() * increments[i - 1];
    }
    for _ in 0..k {
        w = cumulative_trapezoid(xs, &w);
    }
    for (i, x) in xs.iter().enumerate() {
        let mut term = 1.0;
        for (j, zj) in z.iter().enumerate() {
            if j > 0 {
                term *= x / j as f64;
            }
            w[i] += zj * term;
        }
    }
    w
}

/// Linear map from `(increments, z)` to the grid path; the prior covariance
/// of the path is `T Tᵀ`.
pub fn integrated_bm_operator(xs: &[f64], k: usize) -> DMatrix<f64> {
    let m = xs.len();
    let cols = (m - 1) + (k + 1);
    let mut t = DMatrix::zeros(m, cols);
    let mut inc = vec![0.0; m - 1];
    let mut z = vec![0.0; k + 1];
    for c in 0..cols {
        inc.iter_mut().for_each(|v| *v = 0.0);
        z.iter_mut().for_each(|v| *v = 0.0);
        if c < m - 1 {
            inc[c] = 1.0;
        } else {
            z[c - (m - 1)] = 1.0;
        }
        let col = integrated_bm_from_normals(xs, k, &inc, &z);
        t.set_column(c, &DVector::from_vec(col));
    }
    t
}

/// Grid sample of the released `k`-fold integrated Brownian motion.
pub fn sample_integrated_bm(config: &GPPriorConfig, rng: &mut Rng) -> Result<Vec<f64>> {
    config.validate()?;
    let GpKind::IntegratedBm { k } = config.kind else {
        return Err(Error::InvalidArgument("config is not an integrated Brownian motion prior".into()));
    };
    let xs: Vec<f64> = config.grid.iter().map(|p| p[0]).collect();
    let inc: Vec<f64> = (1..xs.len()).map(|_| StandardNormal.sample(rng)).collect();
    let z: Vec<f64> = (0..=k).map(|_| StandardNormal.sample(rng)).collect();
    Ok(integrated_bm_from_normals(&xs, k, &inc, &z))
}
