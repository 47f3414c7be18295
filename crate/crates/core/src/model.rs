//! Heteroscedastic Gaussian observation model and divergences between
//! parameters `θ = (η, f)`, `V = exp f`.
//!
//! Closed forms work on function values at a covariate. The quadrature
//! oracle integrates the defining integrals over `y` directly and serves as
//! the independent check on the closed forms.

use serde::{Deserialize, Serialize};

use crate::design::{DesignSpec, PointRule, AVG_PANELS};
use crate::error::{Error, Result};
use crate::func::FunctionPair;
use crate::quadrature::{composite_legendre, HermiteRule};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `log p(y | x)` for mean `eta` and log-variance `f`.
pub fn log_density_values(eta: f64, f: f64, y: f64) -> f64 {
    -0.5 * (LN_2PI + f) - 0.5 * (y - eta).powi(2) * (-f).exp()
}

pub fn log_density(theta: &FunctionPair, x: &[f64], y: f64) -> f64 {
    log_density_values(theta.mean(x), theta.log_variance(x), y)
}

/// Squared Hellinger distance `∫(√p₁ - √p₂)² dy` between `N(η₁, e^{f₁})`
/// and `N(η₂, e^{f₂})`: `2 - 2 exp(-δ²/(4(V₁+V₂))) √(2√(V₁V₂)/(V₁+V₂))`,
/// evaluated through `expm1`/`ln_1p` so small distances keep full precision.
pub fn hellinger_sq_values(eta1: f64, f1: f64, eta2: f64, f2: f64) -> f64 {
    let (v1, v2) = (f1.exp(), f2.exp());
    let vs = v1 + v2;
    let ln_mean = -(eta1 - eta2).powi(2) / (4.0 * vs);
    let ln_scale = 0.5 * (-(v1.sqrt() - v2.sqrt()).powi(2) / vs).ln_1p();
    (-2.0 * (ln_mean + ln_scale).exp_m1()).clamp(0.0, 2.0)
}

/// `K_x = ½ log(V₂/V₁) - ½(1 - V₁/V₂) + (η₁-η₂)²/(2V₂)`.
pub fn kl_values(eta1: f64, f1: f64, eta2: f64, f2: f64) -> f64 {
    let z = f2 - f1;
    (0.5 * (z + (-z).exp_m1()) + 0.5 * (eta1 - eta2).powi(2) * (-f2).exp()).max(0.0)
}

/// Variance under `θ₁` of the log-likelihood ratio:
/// `2[-½ + V₁/(2V₂)]² + V₁(η₁-η₂)²/V₂²`.
pub fn var_values(eta1: f64, f1: f64, eta2: f64, f2: f64) -> f64 {
    0.5 * (f1 - f2).exp_m1().powi(2) + (f1 - 2.0 * f2).exp() * (eta1 - eta2).powi(2)
}

/// The variance divergence with the second term written as
/// `[V₁/V₂ (η₁-η₂)]²`. Kept for comparison only: it differs from the
/// integral definition by a factor `V₁` in that term.
pub fn var_values_alt(eta1: f64, f1: f64, eta2: f64, f2: f64) -> f64 {
    0.5 * (f1 - f2).exp_m1().powi(2) + ((f1 - f2).exp() * (eta1 - eta2)).powi(2)
}

/// Pointwise upper bound on the squared Hellinger distance,
/// `2(f₁-f₂)² + (η₁-η₂)²/(2(V₁+V₂))`.
pub fn hellinger_bound_values(eta1: f64, f1: f64, eta2: f64, f2: f64) -> f64 {
    2.0 * (f1 - f2).powi(2) + (eta1 - eta2).powi(2) / (2.0 * (f1.exp() + f2.exp()))
}

fn values(theta: &FunctionPair, x: &[f64]) -> (f64, f64) {
    (theta.mean(x), theta.log_variance(x))
}

pub fn hellinger_sq_point(theta1: &FunctionPair, theta2: &FunctionPair, x: &[f64]) -> f64 {
    let (e1, f1) = values(theta1, x);
    let (e2, f2) = values(theta2, x);
    hellinger_sq_values(e1, f1, e2, f2)
}

pub fn kl_point(theta1: &FunctionPair, theta2: &FunctionPair, x: &[f64]) -> f64 {
    let (e1, f1) = values(theta1, x);
    let (e2, f2) = values(theta2, x);
    kl_values(e1, f1, e2, f2)
}

pub fn var_point(theta1: &FunctionPair, theta2: &FunctionPair, x: &[f64]) -> f64 {
    let (e1, f1) = values(theta1, x);
    let (e2, f2) = values(theta2, x);
    var_values(e1, f1, e2, f2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointDivergence {
    pub hellinger_sq: f64,
    pub kl: f64,
    pub var_div: f64,
}

impl PointDivergence {
    pub fn from_values(eta1: f64, f1: f64, eta2: f64, f2: f64) -> Self {
        Self {
            hellinger_sq: hellinger_sq_values(eta1, f1, eta2, f2),
            kl: kl_values(eta1, f1, eta2, f2),
            var_div: var_values(eta1, f1, eta2, f2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    /// `d_n²`, the `Q`-average of the squared Hellinger distance.
    pub hellinger_sq: f64,
    /// `d_n`.
    pub d_n: f64,
    pub kl: f64,
    pub var_div: f64,
    /// Largest change in any of the three averages between the final and the
    /// previous quadrature level; 0 for empirical designs.
    pub quadrature_error: f64,
    pub quadrature_converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pointwise: Option<Vec<PointDivergence>>,
}

/// Averages of the pointwise divergences given values at the rule's points.
pub fn average_values(
    weights: &[f64],
    eta1: &[f64],
    f1: &[f64],
    eta2: &[f64],
    f2: &[f64],
) -> PointDivergence {
    let mut acc = PointDivergence {
        hellinger_sq: 0.0,
        kl: 0.0,
        var_div: 0.0,
    };
    for i in 0..weights.len() {
        let p = PointDivergence::from_values(eta1[i], f1[i], eta2[i], f2[i]);
        acc.hellinger_sq += weights[i] * p.hellinger_sq;
        acc.kl += weights[i] * p.kl;
        acc.var_div += weights[i] * p.var_div;
    }
    acc
}

fn average_on_rule(theta1: &FunctionPair, theta2: &FunctionPair, rule: &PointRule) -> PointDivergence {
    let mut acc = PointDivergence {
        hellinger_sq: 0.0,
        kl: 0.0,
        var_div: 0.0,
    };
    for (x, &w) in rule.points.iter().zip(&rule.weights) {
        let (e1, f1) = values(theta1, x);
        let (e2, f2) = values(theta2, x);
        let p = PointDivergence::from_values(e1, f1, e2, f2);
        acc.hellinger_sq += w * p.hellinger_sq;
        acc.kl += w * p.kl;
        acc.var_div += w * p.var_div;
    }
    acc
}

/// Relative-plus-absolute tolerance for refining the averaging rule.
const REFINE_TOL: f64 = 1e-9;
/// Refinement stops once the rule has this many panels.
const MAX_PANELS: usize = 256;

pub fn avg_divergences(theta1: &FunctionPair, theta2: &FunctionPair, design: &DesignSpec) -> Result<DivergenceReport> {
    avg_divergences_with(theta1, theta2, design, false)
}

/// Averages of `d²`, `K` and `Var` over `Q`. Empirical designs are averaged
/// exactly; continuous laws start from the 256-node rule and double the
/// panel count until successive levels agree, flagging non-convergence once
/// the panel budget is spent.
pub fn avg_divergences_with(
    theta1: &FunctionPair,
    theta2: &FunctionPair,
    design: &DesignSpec,
    keep_pointwise: bool,
) -> Result<DivergenceReport> {
    let (avg, err, converged, rule) = if design.is_fixed() {
        let rule = design.averaging_rule()?;
        (average_on_rule(theta1, theta2, &rule), 0.0, true, rule)
    } else {
        let mut panels = AVG_PANELS;
        let mut prev = average_on_rule(theta1, theta2, &design.averaging_rule_panels(panels / 2)?);
        loop {
            let rule = design.averaging_rule_panels(panels)?;
            let cur = average_on_rule(theta1, theta2, &rule);
            let err = (cur.hellinger_sq - prev.hellinger_sq)
                .abs()
                .max((cur.kl - prev.kl).abs())
                .max((cur.var_div - prev.var_div).abs());
            let scale = cur.hellinger_sq.max(cur.kl).max(cur.var_div);
            let ok = err <= REFINE_TOL * (1.0 + scale);
            if ok || panels >= MAX_PANELS {
                break (cur, err, ok, rule);
            }
            prev = cur;
            panels *= 2;
        }
    };
    let pointwise = keep_pointwise.then(|| {
        rule.points
            .iter()
            .map(|x| {
                let (e1, f1) = values(theta1, x);
                let (e2, f2) = values(theta2, x);
                PointDivergence::from_values(e1, f1, e2, f2)
            })
            .collect()
    });
    Ok(DivergenceReport {
        hellinger_sq: avg.hellinger_sq,
        d_n: avg.hellinger_sq.sqrt(),
        kl: avg.kl,
        var_div: avg.var_div,
        quadrature_error: err,
        quadrature_converged: converged,
        pointwise,
    })
}

/// Settings for [`oracle_divergences`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    /// Gauss–Hermite order for the KL and variance integrals (≥ 20).
    pub hermite_order: usize,
    /// Composite Gauss–Legendre panels for the Hellinger integral.
    pub legendre_panels: usize,
    /// Relative tolerance for agreement with the closed forms.
    pub tolerance: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            hermite_order: 64,
            legendre_panels: 400,
            tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleDivergences {
    pub hellinger_sq: f64,
    pub kl: f64,
    pub var_div: f64,
    /// Largest change between the configured rule and one of half the size.
    pub error_estimate: f64,
    pub closed_form: PointDivergence,
    /// Largest `|oracle - closed| / max(|oracle|, |closed|)` over the three
    /// quantities (differences below 1e-14 count as zero).
    pub max_rel_disagreement: f64,
    pub agrees: bool,
}

/// Absolute floor below which oracle/closed-form differences are ignored.
const ORACLE_ABS_FLOOR: f64 = 1e-14;

fn rel_disagreement(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    if d <= ORACLE_ABS_FLOOR {
        0.0
    } else {
        d / a.abs().max(b.abs())
    }
}

/// Hellinger integral `∫(√p₁ - √p₂)² dy` on a truncated range covering both
/// densities to 12 standard deviations.
fn hellinger_integral(e1: f64, v1: f64, e2: f64, v2: f64, panels: usize) -> Result<f64> {
    let (s1, s2) = (v1.sqrt(), v2.sqrt());
    let lo = (e1 - 12.0 * s1).min(e2 - 12.0 * s2);
    let hi = (e1 + 12.0 * s1).max(e2 + 12.0 * s2);
    let rule = composite_legendre(lo, hi, panels, 16)?;
    let (f1, f2) = (v1.ln(), v2.ln());
    Ok(rule.integrate(|y| {
        let r1 = (0.5 * log_density_values(e1, f1, y)).exp();
        let r2 = (0.5 * log_density_values(e2, f2, y)).exp();
        (r1 - r2).powi(2)
    }))
}

fn kl_var_integrals(rule: &HermiteRule, e1: f64, f1: f64, e2: f64, f2: f64) -> (f64, f64) {
    let llr = |y: f64| log_density_values(e1, f1, y) - log_density_values(e2, f2, y);
    let kl = rule.normal_expectation(e1, f1.exp(), llr);
    let var = rule.normal_expectation(e1, f1.exp(), |y| (llr(y) - kl).powi(2));
    (kl, var)
}

/// Divergences at `x` by numerical integration over `y`: Gauss–Hermite
/// centred at `(η₁(x), V₁(x))` for `K` and `Var`, composite Gauss–Legendre
/// for the Hellinger integral.
pub fn oracle_divergences(
    theta1: &FunctionPair,
    theta2: &FunctionPair,
    x: &[f64],
    config: OracleConfig,
) -> Result<OracleDivergences> {
    if config.hermite_order < 20 {
        return Err(Error::InvalidArgument(format!(
            "oracle quadrature order must be >= 20, got {}",
            config.hermite_order
        )));
    }
    let (e1, f1) = values(theta1, x);
    let (e2, f2) = values(theta2, x);
    let (v1, v2) = (f1.exp(), f2.exp());

    let fine = HermiteRule::new(config.hermite_order)?;
    let coarse = HermiteRule::new(config.hermite_order / 2)?;
    let (kl, var_div) = kl_var_integrals(&fine, e1, f1, e2, f2);
    let (kl_c, var_c) = kl_var_integrals(&coarse, e1, f1, e2, f2);
    let hellinger_sq = hellinger_integral(e1, v1, e2, v2, config.legendre_panels)?;
    let hell_c = hellinger_integral(e1, v1, e2, v2, config.legendre_panels / 2)?;
    let error_estimate = (kl - kl_c)
        .abs()
        .max((var_div - var_c).abs())
        .max((hellinger_sq - hell_c).abs());

    let closed = PointDivergence::from_values(e1, f1, e2, f2);
    let max_rel_disagreement = rel_disagreement(hellinger_sq, closed.hellinger_sq)
        .max(rel_disagreement(kl, closed.kl))
        .max(rel_disagreement(var_div, closed.var_div));
    Ok(OracleDivergences {
        hellinger_sq,
        kl,
        var_div,
        error_estimate,
        closed_form: closed,
        max_rel_disagreement,
        agrees: max_rel_disagreement <= config.tolerance,
    })
}

/// `∫ p(y) dy` for `N(eta, v)` by composite Gauss–Legendre over ±40 sd.
pub fn density_mass(eta: f64, v: f64) -> Result<f64> {
    let s = v.sqrt();
    let rule = composite_legendre(eta - 40.0 * s, eta + 40.0 * s, 200, 16)?;
    let f = v.ln();
    Ok(rule.integrate(|y| log_density_values(eta, f, y).exp()))
}
