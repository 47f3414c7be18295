//! Truths of prescribed smoothness, synthetic data, and the contraction
//! experiment: posterior `d_n`-distance to the truth over a grid of sample
//! sizes, summarized by the slope of log median distance against log n.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{CovariateLaw, DesignSpec};
use crate::error::{Error, Result};
use crate::func::{Func, FunctionPair};
use crate::posterior::{
    diagnostics, posterior_distance_summary, run_gp_mcmc, run_mcmc, Chain, ChainDiagnostics, Dataset, GpFactor,
    SamplerConfig,
};
use crate::priors::{
    jn_schedule_raw, rate_theoretical, sample_se_scale, CoefficientLaw, DimensionLaw, PriorKind, RateSpec,
    SplinePriorConfig,
};
use crate::rng::{derive_seed, seeded, Rng};
use crate::spline::SplineBasis;
use crate::stats::{log_log_fit, median, LineFit};

pub const SCHEMA_VERSION: u32 = 1;
/// Number of terms after the leading one in the lacunary series.
const SERIES_TERMS: i32 = 12;
pub const MAX_N: u64 = 3200;
pub const MAX_J: usize = 32;
pub const MAX_GP_GRID: usize = 128;
/// Runs whose split-R̂ exceeds this are degraded.
pub const RHAT_LIMIT: f64 = 1.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthMeta {
    pub alpha: f64,
    pub gamma: f64,
    pub v_min: f64,
    pub seed: u64,
    pub eta_form: String,
    pub f_form: String,
    /// Constant added to the log-variance to enforce the floor.
    pub f_shift: f64,
}

#[derive(Debug, Clone)]
pub struct Truth {
    pub pair: FunctionPair,
    pub meta: TruthMeta,
}

fn lacunary(smoothness: f64, phases: Vec<f64>) -> impl Fn(f64) -> f64 + Send + Sync + Clone {
    move |x: f64| {
        (0..=SERIES_TERMS)
            .map(|k| 2f64.powf(-(k as f64) * smoothness) * (2f64.powi(k) * std::f64::consts::PI * x + phases[k as usize]).cos())
            .sum()
    }
}

/// `θ₀ = (η₀, f₀)` with `η₀ ∈ C^α`, `exp(f₀) ∈ C^γ` and `exp(f₀) ≥ v_min`.
///
/// Integer smoothness uses `η₀ = sin(2πx)` and `f₀ = ½cos(2πx)`; otherwise
/// `Σ_{k=0}^{12} 2^{-ks} cos(2^k πx + φ_k)` with seeded phases (the f
/// series halved). f₀ is then shifted up until `min exp(f₀) ≥ v_min` on a
/// 10⁵-point grid.
pub fn make_truth(alpha: f64, gamma: f64, v_min: f64, seed: u64) -> Result<Truth> {
    if !(alpha > 0.0 && gamma > 0.0) {
        return Err(Error::InvalidArgument("smoothness must be positive".into()));
    }
    if !(v_min > 0.0 && v_min.is_finite()) {
        return Err(Error::InvalidArgument(format!("v_min must be positive, got {v_min}")));
    }
    let mut rng = seeded(seed);
    let mut phases = || -> Vec<f64> {
        (0..=SERIES_TERMS)
            .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
            .collect()
    };
    let eta_phases = phases();
    let f_phases = phases();
    let (eta, eta_form): (Arc<dyn Fn(f64) -> f64 + Send + Sync>, String) = if alpha.fract() == 0.0 {
        (Arc::new(|x: f64| (std::f64::consts::TAU * x).sin()), "sin(2πx)".into())
    } else {
        (Arc::new(lacunary(alpha, eta_phases)), format!("lacunary series, s = {alpha}"))
    };
    let (f_raw, f_form): (Arc<dyn Fn(f64) -> f64 + Send + Sync>, String) = if gamma.fract() == 0.0 {
        (Arc::new(|x: f64| 0.5 * (std::f64::consts::TAU * x).cos()), "cos(2πx)/2".into())
    } else {
        let g = lacunary(gamma, f_phases);
        (Arc::new(move |x: f64| 0.5 * g(x)), format!("lacunary series / 2, s = {gamma}"))
    };
    let m = 100_000;
    let f_min = (0..=m).map(|i| f_raw(i as f64 / m as f64)).fold(f64::INFINITY, f64::min);
    let shift = (v_min.ln() - f_min).max(0.0);
    let e = eta.clone();
    let fr = f_raw.clone();
    let pair = FunctionPair::new(
        Func::analytic("eta0", move |x| e(x)),
        Func::analytic("f0", move |x| fr(x) + shift),
    );
    Ok(Truth {
        pair,
        meta: TruthMeta {
            alpha,
            gamma,
            v_min,
            seed,
            eta_form,
            f_form,
            f_shift: shift,
        },
    })
}

/// `y_i = η₀(x_i) + V₀(x_i)^{1/2} ε_i`. Fixed designs use the equispaced
/// points `(i - ½)/n`; random designs draw `x_i` from their law.
pub fn gen_data(truth: &FunctionPair, n: usize, design: &DesignSpec, rng: &mut Rng) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Precondition("n must be >= 1".into()));
    }
    if design.dim() != 1 {
        return Err(Error::InvalidArgument("datasets are one-dimensional".into()));
    }
    let (x, design) = if design.is_fixed() {
        let d = DesignSpec::equispaced(n);
        ((0..n).map(|i| (i as f64 + 0.5) / n as f64).collect::<Vec<_>>(), d)
    } else {
        (design.sample(n, rng)?.into_iter().map(|p| p[0]).collect(), design.clone())
    };
    let y = x
        .iter()
        .map(|&xi| {
            let z: f64 = StandardNormal.sample(rng);
            truth.mean(&[xi]) + truth.variance(&[xi]).sqrt() * z
        })
        .collect();
    Ok(Dataset::new(x, y, design)?.with_truth(truth.clone()))
}

/// Writes `x,y,eta0,f0` under a schema header.
pub fn write_dataset_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(w, "# schema_version={SCHEMA_VERSION}")?;
    writeln!(w, "x,y,eta0,f0")?;
    for (&x, &y) in data.x.iter().zip(&data.y) {
        match &data.truth {
            Some(t) => writeln!(w, "{x},{y},{},{}", t.mean(&[x]), t.log_variance(&[x]))?,
            None => writeln!(w, "{x},{y},,")?,
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DesignKind {
    /// Fixed design `x_i = (i - ½)/n`.
    Equispaced,
    Uniform,
    Beta { a: f64, b: f64 },
}

impl DesignKind {
    pub fn spec(&self) -> DesignSpec {
        match *self {
            DesignKind::Equispaced => DesignSpec::equispaced(2),
            DesignKind::Uniform => DesignSpec::uniform(1),
            DesignKind::Beta { a, b } => DesignSpec::Random {
                law: CovariateLaw::Beta { a, b },
            },
        }
    }
}

fn default_order() -> usize {
    4
}
fn default_multiplier() -> f64 {
    4.0
}
fn default_grid() -> usize {
    64
}
fn default_one() -> f64 {
    1.0
}
fn default_jitter() -> f64 {
    1e-10
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PriorSettings {
    /// Spline prior with `J = clamp(round(c · J_raw(n)), q, 32)`, where
    /// `J_raw` is the unrounded dimension schedule and `c` the multiplier.
    Spline {
        #[serde(default = "default_order")]
        order: usize,
        #[serde(default = "default_multiplier")]
        j_multiplier: f64,
        #[serde(default = "normal_law")]
        coefficient_law: CoefficientLaw,
    },
    RescaledSe {
        #[serde(default = "default_grid")]
        grid_points: usize,
        #[serde(default = "default_one")]
        shape: f64,
        #[serde(default = "default_one")]
        rate: f64,
        #[serde(default = "default_jitter")]
        jitter: f64,
    },
    IntegratedBm {
        #[serde(default = "default_grid")]
        grid_points: usize,
    },
}

fn normal_law() -> CoefficientLaw {
    CoefficientLaw::StandardNormal
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub base: u64,
}

fn default_v_min() -> f64 {
    0.1
}
fn default_levels() -> Vec<f64> {
    vec![0.5, 0.9]
}
fn default_design() -> DesignKind {
    DesignKind::Equispaced
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub rate: RateSpec,
    pub n_grid: Vec<u64>,
    pub replicates: usize,
    pub prior: PriorSettings,
    pub sampler: SamplerConfig,
    pub seeds: Seeds,
    pub output_dir: PathBuf,
    #[serde(default = "default_design")]
    pub design: DesignKind,
    #[serde(default = "default_v_min")]
    pub v_min: f64,
    #[serde(default = "default_levels")]
    pub quantile_levels: Vec<f64>,
    #[serde(default)]
    pub write_chains: bool,
}

fn field_err(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::InvalidSpec(format!("{field}: {msg}"))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::InvalidSpec(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.rate
            .validate()
            .map_err(|e| field_err("rate", e))?;
        if self.rate.d != 1 {
            return Err(field_err("rate.d", "experiments are one-dimensional"));
        }
        if self.n_grid.len() < 3 {
            return Err(field_err("n_grid", "needs at least 3 sample sizes"));
        }
        if self.n_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(field_err("n_grid", "must be strictly increasing"));
        }
        if self.n_grid[0] < 2 || *self.n_grid.last().unwrap() > MAX_N {
            return Err(field_err("n_grid", format!("sample sizes must lie in 2..={MAX_N}")));
        }
        if self.replicates < 1 {
            return Err(field_err("replicates", "must be >= 1"));
        }
        self.sampler.validate().map_err(|e| field_err("sampler", e))?;
        if !(self.v_min > 0.0) {
            return Err(field_err("v_min", "must be positive"));
        }
        if self.quantile_levels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(field_err("quantile_levels", "levels must lie in [0,1]"));
        }
        if let DesignKind::Beta { a, b } = self.design {
            if !(a >= 1.0 && b >= 1.0) {
                return Err(field_err("design", "beta parameters must be >= 1"));
            }
        }
        match (self.prior, self.rate.prior) {
            (PriorSettings::Spline { order, j_multiplier, coefficient_law }, PriorKind::Spline) => {
                if order == 0 || order > MAX_J {
                    return Err(field_err("prior.order", format!("must lie in 1..={MAX_J}")));
                }
                if !(j_multiplier > 0.0 && j_multiplier.is_finite()) {
                    return Err(field_err("prior.j_multiplier", "must be positive"));
                }
                coefficient_law.validate().map_err(|e| field_err("prior.coefficient_law", e))?;
            }
            (PriorSettings::RescaledSe { grid_points, shape, rate, jitter }, PriorKind::RescaledSe) => {
                check_grid(grid_points)?;
                if !(shape > 0.0 && rate > 0.0) {
                    return Err(field_err("prior", "gamma shape and rate must be positive"));
                }
                if !(jitter >= 0.0) {
                    return Err(field_err("prior.jitter", "must be >= 0"));
                }
            }
            (PriorSettings::IntegratedBm { grid_points }, PriorKind::IntegratedBm { .. }) => check_grid(grid_points)?,
            _ => return Err(field_err("prior", "kind does not match rate.prior")),
        }
        Ok(())
    }

    /// Basis dimension for sample size `n` under a spline prior.
    pub fn spline_dim(&self, n: u64) -> Result<usize> {
        match self.prior {
            PriorSettings::Spline { order, j_multiplier, .. } => {
                let raw = jn_schedule_raw(&self.rate, n)?;
                Ok(((j_multiplier * raw + 0.5).floor() as usize).clamp(order, MAX_J))
            }
            _ => Err(Error::InvalidArgument("not a spline prior".into())),
        }
    }
}

fn check_grid(m: usize) -> Result<()> {
    if !(2..=MAX_GP_GRID).contains(&m) {
        return Err(field_err("prior.grid_points", format!("must lie in 2..={MAX_GP_GRID}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub n: u64,
    pub replicate: usize,
    pub seed: u64,
    /// Basis dimension or grid size.
    pub dim: usize,
    /// Realized rescalings (η, f) for squared-exponential priors.
    pub scales: Option<(f64, f64)>,
    pub levels: Vec<f64>,
    pub quantiles: Vec<f64>,
    pub median: f64,
    pub diagnostics: Option<ChainDiagnostics>,
    pub degraded: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeSummary {
    pub n: u64,
    /// Median over included replicates of the posterior median `d_n`.
    pub median_distance: f64,
    /// Same for each configured quantile level.
    pub quantile_medians: Vec<f64>,
    pub included: usize,
    pub degraded: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub truth: TruthMeta,
    pub runs: Vec<RunRecord>,
    pub sizes: Vec<SizeSummary>,
    pub slope: LineFit,
    /// Limiting exponent of the rate, e.g. `-min{α/(1+2α), γ/(2+2γ)}`.
    pub theoretical_exponent: f64,
    /// Slope of `log ε_n` over the configured n grid.
    pub theoretical_local_slope: f64,
    pub nonincreasing_steps: usize,
    pub total_steps: usize,
    pub included_runs: usize,
    pub degraded_runs: usize,
    pub total_runs: usize,
}

pub fn theoretical_exponent(spec: &RateSpec) -> f64 {
    let (a, g, d) = (spec.alpha, spec.gamma, spec.d as f64);
    match spec.prior {
        PriorKind::Spline => -(a / (1.0 + 2.0 * a)).min(g / (2.0 + 2.0 * g)),
        PriorKind::RescaledSe => -(a / (d + 2.0 * a)).min(g / (d + 2.0 * g)),
        PriorKind::IntegratedBm { k_eta, k_f } => {
            -(a / (2.0 * k_eta as f64 + 2.0)).min(g / (2.0 * k_f as f64 + 2.0))
        }
    }
}

/// One posterior fit: data for size `n` from `seed`, then a chain under the
/// configured prior.
#[derive(Debug, Clone)]
pub struct FitOutput {
    pub data: Dataset,
    pub chain: Chain,
    /// Basis dimension or grid size.
    pub dim: usize,
    pub scales: Option<(f64, f64)>,
}

pub fn fit_once(cfg: &ExperimentConfig, truth: &FunctionPair, n: u64, seed: u64) -> Result<FitOutput> {
    let mut rng = seeded(seed);
    let data = gen_data(truth, n as usize, &cfg.design.spec(), &mut rng)?;
    let mut scales = None;
    let (chain, dim) = match cfg.prior {
        PriorSettings::Spline { order, coefficient_law, .. } => {
            let j = cfg.spline_dim(n)?;
            let basis = Arc::new(SplineBasis::with_dim(order, j)?);
            let prior = SplinePriorConfig {
                coefficient_law,
                dimension_law: DimensionLaw::Fixed { dim: j },
            };
            (run_mcmc(&data, &basis, &prior, &cfg.sampler, &mut rng)?, j)
        }
        PriorSettings::RescaledSe { grid_points, shape, rate, jitter } => {
            let knots = knots(grid_points);
            let a_eta = sample_se_scale(shape, rate, 1, &mut rng)?;
            let a_f = sample_se_scale(shape, rate, 1, &mut rng)?;
            scales = Some((a_eta, a_f));
            let fe = GpFactor::rescaled_se(knots.clone(), a_eta, jitter)?;
            let ff = GpFactor::rescaled_se(knots, a_f, jitter)?;
            (run_gp_mcmc(&data, &fe, &ff, &cfg.sampler, &mut rng)?, grid_points)
        }
        PriorSettings::IntegratedBm { grid_points } => {
            let PriorKind::IntegratedBm { k_eta, k_f } = cfg.rate.prior else {
                return Err(field_err("prior", "kind does not match rate.prior"));
            };
            let fe = GpFactor::integrated_bm(knots(grid_points), k_eta)?;
            let ff = GpFactor::integrated_bm(knots(grid_points), k_f)?;
            (run_gp_mcmc(&data, &fe, &ff, &cfg.sampler, &mut rng)?, grid_points)
        }
    };
    Ok(FitOutput { data, chain, dim, scales })
}

/// Seed of run `(n, replicate)`.
pub fn run_seed(base: u64, n: u64, replicate: usize) -> u64 {
    derive_seed(base, &[1, n, replicate as u64])
}

/// Seed of the truth shared by all runs.
pub fn truth_seed(base: u64) -> u64 {
    derive_seed(base, &[0])
}

fn one_run(cfg: &ExperimentConfig, truth: &FunctionPair, n: u64, rep: usize) -> RunRecord {
    let seed = run_seed(cfg.seeds.base, n, rep);
    let mut record = RunRecord {
        n,
        replicate: rep,
        seed,
        dim: 0,
        scales: None,
        levels: cfg.quantile_levels.clone(),
        quantiles: vec![],
        median: f64::NAN,
        diagnostics: None,
        degraded: true,
        error: None,
    };
    let result = (|| -> Result<()> {
        let fit = fit_once(cfg, truth, n, seed)?;
        record.dim = fit.dim;
        record.scales = fit.scales;
        let diag = diagnostics(&fit.chain);
        let mut levels = cfg.quantile_levels.clone();
        if !levels.contains(&0.5) {
            levels.push(0.5);
        }
        let summary = posterior_distance_summary(&fit.chain, truth, &fit.data.design, &levels, &[])?;
        let mi = levels.iter().position(|&p| p == 0.5).unwrap();
        record.median = summary.quantiles[mi];
        record.quantiles = summary.quantiles[..cfg.quantile_levels.len()].to_vec();
        record.degraded = !matches!(diag.rhat, Some(r) if r <= RHAT_LIMIT);
        record.diagnostics = Some(diag);
        if cfg.write_chains {
            let dir = cfg.output_dir.join("chains");
            fs::create_dir_all(&dir)?;
            fit.chain.write_csv(&dir.join(format!("chain_n{n}_r{rep}.csv")))?;
        }
        Ok(())
    })();
    if let Err(e) = result {
        record.degraded = true;
        record.error = Some(e.to_string());
    }
    record
}

fn knots(m: usize) -> Vec<f64> {
    (0..m).map(|i| i as f64 / (m - 1) as f64).collect()
}

/// Runs every `(n, replicate)` cell in parallel with its own derived seed
/// and assembles the report in grid order.
pub fn contraction_experiment(cfg: &ExperimentConfig) -> Result<ContractionReport> {
    cfg.validate()?;
    let truth = make_truth(cfg.rate.alpha, cfg.rate.gamma, cfg.v_min, truth_seed(cfg.seeds.base))?;
    let cells: Vec<(u64, usize)> = cfg
        .n_grid
        .iter()
        .flat_map(|&n| (0..cfg.replicates).map(move |r| (n, r)))
        .collect();
    let runs: Vec<RunRecord> = cells
        .par_iter()
        .map(|&(n, r)| one_run(cfg, &truth.pair, n, r))
        .collect();
    assemble_report(cfg, truth.meta, runs)
}

fn assemble_report(cfg: &ExperimentConfig, truth: TruthMeta, runs: Vec<RunRecord>) -> Result<ContractionReport> {
    let mut sizes = Vec::new();
    for &n in &cfg.n_grid {
        let inc: Vec<&RunRecord> = runs.iter().filter(|r| r.n == n && !r.degraded).collect();
        let degraded = runs.iter().filter(|r| r.n == n && r.degraded).count();
        let median_distance = if inc.is_empty() {
            f64::NAN
        } else {
            median(&inc.iter().map(|r| r.median).collect::<Vec<_>>())
        };
        let quantile_medians = (0..cfg.quantile_levels.len())
            .map(|k| {
                if inc.is_empty() {
                    f64::NAN
                } else {
                    median(&inc.iter().map(|r| r.quantiles[k]).collect::<Vec<_>>())
                }
            })
            .collect();
        sizes.push(SizeSummary {
            n,
            median_distance,
            quantile_medians,
            included: inc.len(),
            degraded,
            rate: rate_theoretical(&cfg.rate, n)?,
        });
    }
    let valid: Vec<&SizeSummary> = sizes.iter().filter(|s| s.median_distance.is_finite()).collect();
    let slope = if valid.len() >= 2 {
        log_log_fit(
            &valid.iter().map(|s| s.n as f64).collect::<Vec<_>>(),
            &valid.iter().map(|s| s.median_distance).collect::<Vec<_>>(),
        )
    } else {
        LineFit {
            slope: f64::NAN,
            intercept: f64::NAN,
            slope_se: f64::NAN,
        }
    };
    let rates: Vec<f64> = sizes.iter().map(|s| s.rate).collect();
    let ns: Vec<f64> = sizes.iter().map(|s| s.n as f64).collect();
    let local = log_log_fit(&ns, &rates).slope;
    let nonincreasing_steps = sizes
        .windows(2)
        .filter(|w| w[1].median_distance <= w[0].median_distance)
        .count();
    let degraded_runs = runs.iter().filter(|r| r.degraded).count();
    let total_runs = runs.len();
    Ok(ContractionReport {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        truth,
        sizes,
        slope,
        theoretical_exponent: theoretical_exponent(&cfg.rate),
        theoretical_local_slope: local,
        nonincreasing_steps,
        total_steps: cfg.n_grid.len() - 1,
        included_runs: total_runs - degraded_runs,
        degraded_runs,
        total_runs,
        runs,
    })
}

impl ContractionReport {
    /// Writes `distances.csv` (`n,replicate,quantile,d_n`) and `report.json`
    /// into the configured output directory.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut w = std::io::BufWriter::new(fs::File::create(dir.join("distances.csv"))?);
        writeln!(w, "# schema_version={SCHEMA_VERSION}")?;
        writeln!(w, "n,replicate,quantile,d_n")?;
        for r in &self.runs {
            for (p, q) in r.levels.iter().zip(&r.quantiles) {
                writeln!(w, "{},{},{},{}", r.n, r.replicate, p, q)?;
            }
        }
        w.flush()?;
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))?;
        fs::write(dir.join("report.json"), json)?;
        Ok(())
    }
}

/// Recomputes the slope of log median distance from a distance CSV,
/// skipping the listed `(n, replicate)` runs.
pub fn slope_from_distance_csv(path: &Path, excluded: &[(u64, usize)]) -> Result<LineFit> {
    let text = fs::read_to_string(path)?;
    let mut per_n: std::collections::BTreeMap<u64, Vec<f64>> = Default::default();
    for line in text.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(Error::Io(format!("malformed row: {line}")));
        }
        let parse = |s: &str| s.parse::<f64>().map_err(|e| Error::Io(format!("{s}: {e}")));
        let n = parts[0].parse::<u64>().map_err(|e| Error::Io(e.to_string()))?;
        let rep = parts[1].parse::<usize>().map_err(|e| Error::Io(e.to_string()))?;
        if parse(parts[2])? == 0.5 && !excluded.contains(&(n, rep)) {
            per_n.entry(n).or_default().push(parse(parts[3])?);
        }
    }
    let ns: Vec<f64> = per_n.keys().map(|&n| n as f64).collect();
    let meds: Vec<f64> = per_n.values().map(|v| median(v)).collect();
    Ok(log_log_fit(&ns, &meds))
}

/// Default configuration for the α = γ = 2 spline contraction experiment.
pub fn default_contraction_config(output_dir: PathBuf) -> ExperimentConfig {
    ExperimentConfig {
        rate: RateSpec::spline(2.0, 2.0),
        n_grid: vec![100, 200, 400, 800, 1600],
        replicates: 5,
        prior: PriorSettings::Spline {
            order: default_order(),
            j_multiplier: default_multiplier(),
            coefficient_law: CoefficientLaw::StandardNormal,
        },
        sampler: SamplerConfig::default(),
        seeds: Seeds { base: 20_240_601 },
        output_dir,
        design: DesignKind::Equispaced,
        v_min: default_v_min(),
        quantile_levels: default_levels(),
        write_chains: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn integer_smoothness_truth() {
        let t = make_truth(2.0, 2.0, 0.1, 1).unwrap();
        assert_abs_diff_eq!(t.pair.mean(&[0.25]), 1.0, epsilon = 1e-15);
        assert_eq!(t.meta.f_shift, 0.0);
    }

    #[test]
    fn variance_floor() {
        for (a, g, v) in [(0.6, 0.7, 1.0), (2.0, 2.0, 2.0), (1.3, 0.6, 0.05)] {
            let t = make_truth(a, g, v, 7).unwrap();
            let min = (0..10_000)
                .map(|i| t.pair.variance(&[i as f64 / 9999.0]))
                .fold(f64::INFINITY, f64::min);
            assert!(min >= v * (1.0 - 1e-12), "{min} < {v}");
        }
        assert!(make_truth(1.0, 1.0, 0.0, 0).is_err());
    }

    #[test]
    fn standardized_residuals() {
        let t = make_truth(0.6, 1.3, 0.2, 3).unwrap();
        let data = gen_data(&t.pair, 100_000, &DesignSpec::uniform(1), &mut seeded(5)).unwrap();
        let z: Vec<f64> = data
            .x
            .iter()
            .zip(&data.y)
            .map(|(&x, &y)| (y - t.pair.mean(&[x])) / t.pair.variance(&[x]).sqrt())
            .collect();
        let (_, var) = crate::stats::mean_var(&z);
        assert!((var - 1.0).abs() < 0.02, "{var}");
    }

    #[test]
    fn fixed_design_points() {
        let t = make_truth(2.0, 2.0, 0.1, 1).unwrap();
        let d = gen_data(&t.pair, 4, &DesignSpec::equispaced(2), &mut seeded(0)).unwrap();
        assert_eq!(d.x, vec![0.125, 0.375, 0.625, 0.875]);
        let d2 = gen_data(&t.pair, 4, &DesignSpec::equispaced(2), &mut seeded(0)).unwrap();
        assert_eq!(d.y, d2.y);
    }

    #[test]
    fn tiny_variance_tracks_mean() {
        let pair = FunctionPair::new(Func::analytic("s", |x| x * x), Func::Constant(1e-12f64.ln()));
        let d = gen_data(&pair, 50, &DesignSpec::uniform(1), &mut seeded(2)).unwrap();
        for (x, y) in d.x.iter().zip(&d.y) {
            assert!((y - x * x).abs() < 1e-5);
        }
    }

    #[test]
    fn config_validation_messages() {
        let mut c = default_contraction_config("out".into());
        assert!(c.validate().is_ok());
        c.n_grid = vec![100, 100, 200];
        let e = c.validate().unwrap_err().to_string();
        assert!(e.contains("n_grid"), "{e}");
        let mut c = default_contraction_config("out".into());
        c.rate.alpha = 0.3;
        assert!(c.validate().unwrap_err().to_string().contains("rate"));
        let json = serde_json::to_string(&default_contraction_config("o".into())).unwrap();
        let back = ExperimentConfig::from_json(&json).unwrap();
        assert_eq!(back, default_contraction_config("o".into()));
        let e = ExperimentConfig::from_json(r#"{"rate": {"alpha": 2, "gamma": 2, "prior": {"kind": "spline"}}}"#)
            .unwrap_err()
            .to_string();
        assert!(e.contains("missing field"), "{e}");
    }

    #[test]
    fn spline_dim_schedule() {
        let c = default_contraction_config("o".into());
        let dims: Vec<usize> = c.n_grid.iter().map(|&n| c.spline_dim(n).unwrap()).collect();
        assert!(dims.windows(2).all(|w| w[1] >= w[0]));
        assert!(dims.iter().all(|&j| (4..=32).contains(&j)));
    }

    #[test]
    fn theoretical_exponents() {
        assert_abs_diff_eq!(theoretical_exponent(&RateSpec::spline(2.0, 2.0)), -1.0 / 3.0, epsilon = 1e-15);
    }
}
