//! Posterior sampling for the spline-parameterized model and the
//! grid-parameterized Gaussian-process model.
//!
//! Both models are linear in their parameters: `η(x_i) = (Φc_η)_i` and
//! `f(x_i) = (Φc_f)_i`, where `Φ` is a banded B-spline design matrix or, for
//! Gaussian-process priors, linear interpolation composed with a prior
//! covariance factor (so the parameters are whitened). The sampler is a
//! blockwise adaptive random-walk Metropolis, updating the η-block and the
//! f-block in turn.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::DesignSpec;
use crate::error::{Error, Result};
use crate::func::{Func, FunctionPair};
use crate::model::{avg_divergences, log_density_values};
use crate::priors::{
    cholesky_with_jitter, integrated_bm_operator, se_kernel_matrix, CoefficientLaw, SplinePriorConfig,
};
use crate::rng::Rng;
use crate::sparse::BandedRows;
use crate::spline::{solve_spd_with_ridge, CoefficientVector, SplineBasis};
use crate::stats::{mean_var, quantile_sorted};

/// Observations `y_i = η(x_i) + V(x_i)^{1/2} ε_i` on `[0,1]`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub design: DesignSpec,
    /// Generating parameter, when known.
    pub truth: Option<FunctionPair>,
}

impl Dataset {
    pub fn new(x: Vec<f64>, y: Vec<f64>, design: DesignSpec) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::Precondition("dataset needs at least one observation".into()));
        }
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                got: y.len(),
            });
        }
        if let Some(&bad) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain { x: bad });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("responses must be finite".into()));
        }
        Ok(Self {
            x,
            y,
            design,
            truth: None,
        })
    }

    pub fn with_truth(mut self, truth: FunctionPair) -> Self {
        self.truth = Some(truth);
        self
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Unnormalized log posterior `Σ log p_θ(y_i | x_i) + log π(β_η) + log π(β_f)`.
pub fn log_posterior(
    eta: &CoefficientVector,
    f: &CoefficientVector,
    data: &Dataset,
    prior: &SplinePriorConfig,
    basis: &SplineBasis,
) -> Result<f64> {
    for c in [eta, f] {
        if c.beta.len() != basis.dim() {
            return Err(Error::DimensionMismatch {
                expected: basis.dim(),
                got: c.beta.len(),
            });
        }
    }
    Ok(log_likelihood(eta, f, data, basis)? + prior.log_density(&eta.beta) + prior.log_density(&f.beta))
}

/// Likelihood part of [`log_posterior`].
pub fn log_likelihood(eta: &CoefficientVector, f: &CoefficientVector, data: &Dataset, basis: &SplineBasis) -> Result<f64> {
    let rows = basis.rows(&data.x)?;
    let ev = rows.mul(&eta.beta);
    let fv = rows.mul(&f.beta);
    Ok(sum_log_density(&ev, &fv, &data.y))
}

fn sum_log_density(eta: &[f64], f: &[f64], y: &[f64]) -> f64 {
    eta.iter()
        .zip(f)
        .zip(y)
        .map(|((&e, &v), &yy)| log_density_values(e, v, yy))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub target_acceptance: f64,
    /// Drop the likelihood and sample the prior; used to test the sampler.
    #[serde(default)]
    pub prior_only: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            burn_in: 5_000,
            thin: 5,
            target_acceptance: 0.3,
            prior_only: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidArgument(format!(
                "burn-in {} must be smaller than the chain length {}",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::InvalidArgument("thinning must be >= 1".into()));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "target acceptance must lie in (0,1), got {}",
                self.target_acceptance
            )));
        }
        Ok(())
    }
}

/// How the stored draw values map to functions.
#[derive(Debug, Clone)]
pub enum Representation {
    Spline(Arc<SplineBasis>),
    /// Values at increasing knots, interpolated linearly.
    Grid(Vec<f64>),
}

/// One retained state. Spline chains store coefficients, Gaussian-process
/// chains store grid values.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraw {
    pub iteration: usize,
    pub eta: Vec<f64>,
    pub f: Vec<f64>,
    pub log_posterior: f64,
}

#[derive(Debug, Clone)]
pub struct Chain {
    pub draws: Vec<PosteriorDraw>,
    pub representation: Representation,
    /// Post-burn-in acceptance rate of the η-block.
    pub acceptance_eta: f64,
    pub acceptance_f: f64,
    pub final_log_scales: [f64; 2],
    pub initial_log_posterior: f64,
    pub config: SamplerConfig,
}

impl Chain {
    pub fn function_pair(&self, draw: &PosteriorDraw) -> Result<FunctionPair> {
        Ok(match &self.representation {
            Representation::Spline(b) => FunctionPair::new(
                Func::spline(b.clone(), draw.eta.clone())?,
                Func::spline(b.clone(), draw.f.clone())?,
            ),
            Representation::Grid(knots) => FunctionPair::new(
                Func::Grid {
                    knots: knots.clone(),
                    values: draw.eta.clone(),
                },
                Func::Grid {
                    knots: knots.clone(),
                    values: draw.f.clone(),
                },
            ),
        })
    }

    pub fn log_posterior_trace(&self) -> Vec<f64> {
        self.draws.iter().map(|d| d.log_posterior).collect()
    }

    /// Trace of one stored value; block 0 is η, block 1 is f.
    pub fn trace(&self, block: usize, index: usize) -> Vec<f64> {
        self.draws
            .iter()
            .map(|d| if block == 0 { d.eta[index] } else { d.f[index] })
            .collect()
    }

    /// Writes `iteration,block,coeff_index,value,log_post`, one row per stored value.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "# schema_version=1")?;
        writeln!(w, "iteration,block,coeff_index,value,log_post")?;
        for d in &self.draws {
            for (name, vals) in [("eta", &d.eta), ("f", &d.f)] {
                for (j, v) in vals.iter().enumerate() {
                    writeln!(w, "{},{},{},{},{}", d.iteration, name, j, v, d.log_posterior)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Design of one parameter block.
#[derive(Debug, Clone)]
enum Features {
    Banded(BandedRows),
    Dense(DMatrix<f64>),
}

impl Features {
    fn ncols(&self) -> usize {
        match self {
            Features::Banded(b) => b.ncols,
            Features::Dense(m) => m.ncols(),
        }
    }

    fn mul_into(&self, c: &[f64], out: &mut [f64]) {
        match self {
            Features::Banded(b) => b.mul_into(c, out),
            Features::Dense(m) => {
                out.iter_mut().for_each(|v| *v = 0.0);
                for (j, &cj) in c.iter().enumerate() {
                    if cj != 0.0 {
                        for (o, fij) in out.iter_mut().zip(m.column(j).iter()) {
                            *o += cj * fij;
                        }
                    }
                }
            }
        }
    }

    fn weighted_gram(&self, w: &[f64]) -> DMatrix<f64> {
        match self {
            Features::Banded(b) => b.weighted_gram(w),
            Features::Dense(m) => {
                let mut scaled = m.clone();
                for (i, wi) in w.iter().enumerate() {
                    scaled.row_mut(i).scale_mut(*wi);
                }
                m.transpose() * scaled
            }
        }
    }

    fn weighted_rhs(&self, w: &[f64], target: &[f64]) -> DVector<f64> {
        match self {
            Features::Banded(b) => b.weighted_rhs(w, target),
            Features::Dense(m) => {
                let wt = DVector::from_iterator(w.len(), w.iter().zip(target).map(|(a, b)| a * b));
                m.transpose() * wt
            }
        }
    }
}

struct Block {
    features: Features,
    law: CoefficientLaw,
    /// Maps parameters to stored values; identity when absent.
    output: Option<DMatrix<f64>>,
}

impl Block {
    fn log_prior(&self, c: &[f64]) -> f64 {
        c.iter().map(|&v| self.law.log_density(v)).sum()
    }

    fn stored(&self, c: &[f64]) -> Vec<f64> {
        match &self.output {
            None => c.to_vec(),
            Some(m) => (m * DVector::from_column_slice(c)).iter().copied().collect(),
        }
    }
}

/// Pilot mean and log-variance at the data points: running-window mean of
/// `y`, then log of the running-window mean of squared residuals.
pub fn pilot_estimate(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let half = (n / 20).max(2);
    let window_mean = |vals: &[f64]| -> Vec<f64> {
        let mut prefix = vec![0.0; n + 1];
        for (i, &k) in order.iter().enumerate() {
            prefix[i + 1] = prefix[i] + vals[k];
        }
        let mut out = vec![0.0; n];
        for (i, &k) in order.iter().enumerate() {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            out[k] = (prefix[hi] - prefix[lo]) / (hi - lo) as f64;
        }
        out
    };
    let mean = window_mean(y);
    let sq: Vec<f64> = y.iter().zip(&mean).map(|(a, m)| (a - m).powi(2)).collect();
    let logvar = window_mean(&sq).iter().map(|v| v.max(1e-8).ln()).collect();
    (mean, logvar)
}

/// Ridge least squares `(FᵀF + I)c = Fᵀt`, the ridge being the unit prior
/// precision.
fn initial_params(features: &Features, target: &[f64]) -> Result<Vec<f64>> {
    let ones = vec![1.0; target.len()];
    let mut g = features.weighted_gram(&ones);
    for i in 0..g.nrows() {
        g[(i, i)] += 1.0;
    }
    let rhs = features.weighted_rhs(&ones, target);
    Ok(solve_spd_with_ridge(&g, &rhs)?.0.iter().copied().collect())
}

fn proposal_factor(precision: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = precision.nrows();
    let cov = match precision.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => {
            let (ch, _) = cholesky_with_jitter(&precision, 1e-10 * precision.trace().abs().max(1.0) / d as f64)?;
            ch.inverse()
        }
    };
    factor_or_diag(&cov)
}

fn factor_or_diag(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = cov.nrows();
    let base = 1e-10 * cov.trace().abs().max(1e-300) / d as f64;
    match cholesky_with_jitter(cov, 0.0) {
        Ok((ch, _)) => Ok(ch.l()),
        Err(_) => Ok(cholesky_with_jitter(cov, base)?.0.l()),
    }
}

/// Running first and second moments of one block, for covariance
/// adaptation.
struct Moments {
    count: usize,
    mean: DVector<f64>,
    m2: DMatrix<f64>,
}

impl Moments {
    fn new(d: usize) -> Self {
        Self {
            count: 0,
            mean: DVector::zeros(d),
            m2: DMatrix::zeros(d, d),
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.count += 1;
        let x = DVector::from_column_slice(x);
        let delta = &x - &self.mean;
        self.mean += &delta / self.count as f64;
        let delta2 = &x - &self.mean;
        self.m2.ger(1.0, &delta, &delta2, 1.0);
    }

    fn covariance(&self) -> DMatrix<f64> {
        let mut c = &self.m2 / (self.count - 1) as f64;
        // symmetrize against rounding
        c = (&c + c.transpose()) * 0.5;
        c
    }
}

const ADAPT_EVERY: usize = 500;
const LOG_SCALE_LIMIT: f64 = 30.0;

fn run_blocks(blocks: [Block; 2], init: [Vec<f64>; 2], y: &[f64], representation: Representation, config: &SamplerConfig, rng: &mut Rng) -> Result<Chain> {
    config.validate()?;
    let n = y.len();
    let prior_only = config.prior_only;
    let mut params = init;
    let mut vals: [Vec<f64>; 2] = [vec![0.0; n], vec![0.0; n]];
    for b in 0..2 {
        blocks[b].features.mul_into(&params[b], &mut vals[b]);
    }
    let loglik = |ev: &[f64], fv: &[f64]| if prior_only { 0.0 } else { sum_log_density(ev, fv, y) };
    let mut ll = loglik(&vals[0], &vals[1]);
    let mut lp = [blocks[0].log_prior(&params[0]), blocks[1].log_prior(&params[1])];
    let initial = ll + lp[0] + lp[1];
    if !initial.is_finite() {
        return Err(Error::Sampler(format!(
            "log posterior at the initial state is {initial} (log likelihood {ll}, log priors {:?})",
            lp
        )));
    }

    // proposal shapes from the Fisher information at the initial state
    let mut factors = if prior_only {
        [
            DMatrix::identity(params[0].len(), params[0].len()),
            DMatrix::identity(params[1].len(), params[1].len()),
        ]
    } else {
        let w_eta: Vec<f64> = vals[1].iter().map(|f| (-f).exp()).collect();
        let mut p_eta = blocks[0].features.weighted_gram(&w_eta);
        let mut p_f = blocks[1].features.weighted_gram(&vec![0.5; n]);
        for p in [&mut p_eta, &mut p_f] {
            for i in 0..p.nrows() {
                p[(i, i)] += 1.0;
            }
        }
        [proposal_factor(p_eta)?, proposal_factor(p_f)?]
    };
    let dims = [params[0].len(), params[1].len()];
    let mut log_scale = [
        (2.38 / (dims[0] as f64).sqrt()).ln(),
        (2.38 / (dims[1] as f64).sqrt()).ln(),
    ];
    let mut moments = [Moments::new(dims[0]), Moments::new(dims[1])];
    let adapt_from = config.burn_in / 4;

    let mut accepted = [0usize; 2];
    let mut draws = Vec::with_capacity((config.iterations - config.burn_in) / config.thin + 1);
    let mut prop_vals = vec![0.0; n];
    let mut z = vec![0.0; dims[0].max(dims[1])];

    for t in 0..config.iterations {
        for b in 0..2 {
            let d = dims[b];
            for zi in z.iter_mut().take(d) {
                *zi = StandardNormal.sample(rng);
            }
            let s = log_scale[b].exp();
            let mut prop = params[b].clone();
            let l = &factors[b];
            for i in 0..d {
                let mut acc = 0.0;
                for j in 0..=i {
                    acc += l[(i, j)] * z[j];
                }
                prop[i] += s * acc;
            }
            let lp_new = blocks[b].log_prior(&prop);
            let ll_new = if prior_only {
                0.0
            } else {
                blocks[b].features.mul_into(&prop, &mut prop_vals);
                if b == 0 {
                    loglik(&prop_vals, &vals[1])
                } else {
                    loglik(&vals[0], &prop_vals)
                }
            };
            let log_alpha = (ll_new + lp_new) - (ll + lp[b]);
            let log_alpha = if log_alpha.is_nan() { f64::NEG_INFINITY } else { log_alpha };
            let u: f64 = rng.random();
            if u.ln() < log_alpha {
                params[b] = prop;
                if !prior_only {
                    std::mem::swap(&mut vals[b], &mut prop_vals);
                }
                ll = ll_new;
                lp[b] = lp_new;
                if t >= config.burn_in {
                    accepted[b] += 1;
                }
            }
            if t < config.burn_in {
                let alpha = log_alpha.min(0.0).exp();
                log_scale[b] += (t as f64 + 1.0).powf(-0.6) * (alpha - config.target_acceptance);
                if !log_scale[b].is_finite() || log_scale[b].abs() > LOG_SCALE_LIMIT {
                    return Err(Error::Sampler(format!(
                        "proposal scale of block {b} diverged (log scale {}) at iteration {t}",
                        log_scale[b]
                    )));
                }
                if t >= adapt_from {
                    moments[b].push(&params[b]);
                    if (t + 1) % ADAPT_EVERY == 0 && moments[b].count >= 2 * d + 20 {
                        if let Ok(l) = factor_or_diag(&moments[b].covariance()) {
                            if l.iter().all(|v| v.is_finite()) {
                                factors[b] = l;
                            }
                        }
                    }
                }
            }
        }
        if t >= config.burn_in && (t - config.burn_in).is_multiple_of(config.thin) {
            draws.push(PosteriorDraw {
                iteration: t,
                eta: blocks[0].stored(&params[0]),
                f: blocks[1].stored(&params[1]),
                log_posterior: ll + lp[0] + lp[1],
            });
        }
    }
    let kept = (config.iterations - config.burn_in) as f64;
    Ok(Chain {
        draws,
        representation,
        acceptance_eta: accepted[0] as f64 / kept,
        acceptance_f: accepted[1] as f64 / kept,
        final_log_scales: log_scale,
        initial_log_posterior: initial,
        config: *config,
    })
}

/// Blockwise adaptive random-walk Metropolis for the spline model. Both
/// blocks use `basis` and i.i.d. coefficients from `prior`; the chain starts
/// at the least-squares fit of the pilot estimate.
pub fn run_mcmc(
    data: &Dataset,
    basis: &Arc<SplineBasis>,
    prior: &SplinePriorConfig,
    config: &SamplerConfig,
    rng: &mut Rng,
) -> Result<Chain> {
    prior.validate()?;
    if let crate::priors::DimensionLaw::Fixed { dim } = prior.dimension_law {
        if dim != basis.dim() {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: basis.dim(),
            });
        }
    }
    let rows = basis.rows(&data.x)?;
    let features = Features::Banded(rows);
    let init = if config.prior_only {
        [vec![0.0; basis.dim()], vec![0.0; basis.dim()]]
    } else {
        let (m, v) = pilot_estimate(&data.x, &data.y);
        [initial_params(&features, &m)?, initial_params(&features, &v)?]
    };
    let block = |features: Features| Block {
        features,
        law: prior.coefficient_law,
        output: None,
    };
    run_blocks(
        [block(features.clone()), block(features)],
        init,
        &data.y,
        Representation::Spline(basis.clone()),
        config,
        rng,
    )
}

/// Prior covariance factor of a Gaussian process on a one-dimensional grid:
/// the grid values are `factor · c` with `c ~ N(0, I)`.
#[derive(Debug, Clone)]
pub struct GpFactor {
    pub knots: Vec<f64>,
    pub factor: DMatrix<f64>,
    /// Realized rescaling, for the squared-exponential prior.
    pub scale: Option<f64>,
    pub jitter: f64,
}

impl GpFactor {
    pub fn rescaled_se(knots: Vec<f64>, scale: f64, jitter: f64) -> Result<Self> {
        check_knots(&knots)?;
        let grid: Vec<Vec<f64>> = knots.iter().map(|&x| vec![x]).collect();
        let (ch, jitter) = cholesky_with_jitter(&se_kernel_matrix(&grid, scale), jitter)?;
        Ok(Self {
            knots,
            factor: ch.l(),
            scale: Some(scale),
            jitter,
        })
    }

    pub fn integrated_bm(knots: Vec<f64>, k: usize) -> Result<Self> {
        check_knots(&knots)?;
        if knots[0] != 0.0 {
            return Err(Error::InvalidArgument("integrated Brownian motion grid must start at 0".into()));
        }
        let factor = integrated_bm_operator(&knots, k);
        Ok(Self {
            knots,
            factor,
            scale: None,
            jitter: 0.0,
        })
    }
}

fn check_knots(knots: &[f64]) -> Result<()> {
    if knots.len() < 2 || knots.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("grid must have at least two increasing points".into()));
    }
    if let Some(&x) = knots.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Domain { x });
    }
    Ok(())
}

/// Linear-interpolation weights of each `x` on the knots, as a dense
/// `n × m` matrix.
pub fn interpolation_matrix(knots: &[f64], x: &[f64]) -> DMatrix<f64> {
    let m = knots.len();
    let mut p = DMatrix::zeros(x.len(), m);
    for (i, &xi) in x.iter().enumerate() {
        if xi <= knots[0] {
            p[(i, 0)] = 1.0;
        } else if xi >= knots[m - 1] {
            p[(i, m - 1)] = 1.0;
        } else {
            let k = knots.partition_point(|&v| v <= xi).min(m - 1);
            let t = (xi - knots[k - 1]) / (knots[k] - knots[k - 1]);
            p[(i, k - 1)] = 1.0 - t;
            p[(i, k)] = t;
        }
    }
    p
}

/// Random-walk Metropolis for the grid-valued Gaussian-process model, with
/// the scale of each process held fixed over the chain.
pub fn run_gp_mcmc(data: &Dataset, eta: &GpFactor, f: &GpFactor, config: &SamplerConfig, rng: &mut Rng) -> Result<Chain> {
    if eta.knots != f.knots {
        return Err(Error::InvalidArgument("mean and log-variance processes must share a grid".into()));
    }
    let interp = interpolation_matrix(&eta.knots, &data.x);
    let fe = Features::Dense(&interp * &eta.factor);
    let ff = Features::Dense(&interp * &f.factor);
    let init = if config.prior_only {
        [vec![0.0; fe.ncols()], vec![0.0; ff.ncols()]]
    } else {
        let (m, v) = pilot_estimate(&data.x, &data.y);
        [initial_params(&fe, &m)?, initial_params(&ff, &v)?]
    };
    let blocks = [
        Block {
            features: fe,
            law: CoefficientLaw::StandardNormal,
            output: Some(eta.factor.clone()),
        },
        Block {
            features: ff,
            law: CoefficientLaw::StandardNormal,
            output: Some(f.factor.clone()),
        },
    ];
    run_blocks(blocks, init, &data.y, Representation::Grid(eta.knots.clone()), config, rng)
}

/// Effective sample size with Geyer's initial positive sequence: pair sums
/// of autocorrelations are added until the first negative one. `None` for a
/// constant or non-finite trace.
pub fn effective_sample_size(trace: &[f64]) -> Option<f64> {
    let n = trace.len();
    if n < 4 || trace.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mean = trace.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = trace.iter().map(|v| v - mean).collect();
    let c0 = centered.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if !(c0 > 1e-300) || c0 <= 1e-24 * mean * mean {
        return None;
    }
    let rho = |k: usize| -> f64 {
        centered[..n - k].iter().zip(&centered[k..]).map(|(a, b)| a * b).sum::<f64>() / (n as f64 * c0)
    };
    let mut sum = 0.0;
    let mut m = 0;
    while 2 * m + 1 < n {
        let pair = if m == 0 { 1.0 + rho(1) } else { rho(2 * m) + rho(2 * m + 1) };
        if pair < 0.0 {
            break;
        }
        sum += pair;
        m += 1;
    }
    let tau = (-1.0 + 2.0 * sum).max(1.0 / n as f64);
    Some((n as f64 / tau).min(n as f64))
}

/// Split-chain potential scale reduction: the trace is cut into two halves
/// treated as separate chains.
pub fn split_rhat(trace: &[f64]) -> Option<f64> {
    let half = trace.len() / 2;
    if half < 2 {
        return None;
    }
    let a = &trace[..half];
    let b = &trace[trace.len() - half..];
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let w = 0.5 * (va + vb);
    if !(w > 0.0) || !w.is_finite() {
        return None;
    }
    let mm = 0.5 * (ma + mb);
    let bvar = half as f64 * ((ma - mm).powi(2) + (mb - mm).powi(2));
    let hn = half as f64;
    let var_plus = (hn - 1.0) / hn * w + bvar / hn;
    Some((var_plus / w).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub draws: usize,
    pub acceptance_eta: f64,
    pub acceptance_f: f64,
    /// ESS of the log-posterior trace.
    pub ess_log_post: Option<f64>,
    /// Smallest ESS over all stored values.
    pub ess_min: Option<f64>,
    /// Split-R̂ of the log-posterior trace.
    pub rhat: Option<f64>,
    /// Some trace was constant or the chain was shorter than 100 draws.
    pub flagged: bool,
}

pub fn diagnostics(chain: &Chain) -> ChainDiagnostics {
    let lp = chain.log_posterior_trace();
    let ess_log_post = effective_sample_size(&lp);
    let mut flagged = chain.draws.len() < 100 || ess_log_post.is_none();
    let mut ess_min: Option<f64> = None;
    if let Some(d0) = chain.draws.first() {
        for (block, len) in [(0, d0.eta.len()), (1, d0.f.len())] {
            for j in 0..len {
                match effective_sample_size(&chain.trace(block, j)) {
                    Some(e) => ess_min = Some(ess_min.map_or(e, |m| m.min(e))),
                    None => flagged = true,
                }
            }
        }
    }
    ChainDiagnostics {
        draws: chain.draws.len(),
        acceptance_eta: chain.acceptance_eta,
        acceptance_f: chain.acceptance_f,
        ess_log_post,
        ess_min,
        rhat: split_rhat(&lp),
        flagged,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceSummary {
    pub levels: Vec<f64>,
    pub quantiles: Vec<f64>,
    pub radii: Vec<f64>,
    /// Posterior fraction with `d_n` above each radius.
    pub exceedance: Vec<f64>,
    #[serde(skip)]
    pub distances: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub diagnostics: ChainDiagnostics,
    pub distances: Option<DistanceSummary>,
}

pub fn summarize(chain: &Chain, truth: Option<(&FunctionPair, &DesignSpec)>, levels: &[f64], radii: &[f64]) -> Result<ChainSummary> {
    Ok(ChainSummary {
        diagnostics: diagnostics(chain),
        distances: truth
            .map(|(t, d)| posterior_distance_summary(chain, t, d, levels, radii))
            .transpose()?,
    })
}

/// Quantiles of `d_n(θ_draw, θ_0)` over the retained draws and the fraction
/// of draws beyond each radius.
pub fn posterior_distance_summary(
    chain: &Chain,
    truth: &FunctionPair,
    design: &DesignSpec,
    levels: &[f64],
    radii: &[f64],
) -> Result<DistanceSummary> {
    if chain.draws.is_empty() {
        return Err(Error::Precondition("chain has no retained draws".into()));
    }
    let distances = chain
        .draws
        .par_iter()
        .map(|d| Ok(avg_divergences(&chain.function_pair(d)?, truth, design)?.d_n))
        .collect::<Result<Vec<f64>>>()?;
    Ok(summarize_distances(distances, levels, radii))
}

/// Quantile and exceedance summary of a set of distances.
pub fn summarize_distances(distances: Vec<f64>, levels: &[f64], radii: &[f64]) -> DistanceSummary {
    let mut sorted = distances.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut quantiles: Vec<f64> = levels.iter().map(|&p| quantile_sorted(&sorted, p)).collect();
    // guard monotonicity against rounding in the interpolation
    let mut order: Vec<usize> = (0..levels.len()).collect();
    order.sort_by(|&a, &b| levels[a].total_cmp(&levels[b]));
    for w in order.windows(2) {
        if quantiles[w[1]] < quantiles[w[0]] {
            quantiles[w[1]] = quantiles[w[0]];
        }
    }
    let n = sorted.len() as f64;
    let exceedance = radii
        .iter()
        .map(|&r| sorted.iter().filter(|&&d| d > r).count() as f64 / n)
        .collect();
    DistanceSummary {
        levels: levels.to_vec(),
        quantiles,
        radii: radii.to_vec(),
        exceedance,
        distances,
    }
}
