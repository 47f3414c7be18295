//! Covariate laws: fixed design points (averaging is over their empirical
//! measure) or a sampling distribution on `[0,1]^d`.

use rand::Rng as _;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;

use crate::error::{Error, Result};
use crate::quadrature::{composite_legendre, halton_point};
use crate::rng::Rng;

/// Panels × nodes of the default one-dimensional averaging rule (256 nodes).
pub const AVG_PANELS: usize = 16;
pub const AVG_NODES_PER_PANEL: usize = 16;
/// Quasi-random points used to average over `[0,1]^d` for `d ≥ 2`.
pub const QMC_POINTS: usize = 1 << 14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CovariateLaw {
    Uniform { dim: usize },
    /// One-dimensional Beta(a, b) law, `a, b ≥ 1`.
    Beta { a: f64, b: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DesignSpec {
    Fixed { points: Vec<Vec<f64>> },
    Random { law: CovariateLaw },
}

/// Points with probability weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct PointRule {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl PointRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn average(&self, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(p, &w)| w * f(p))
            .sum()
    }

    /// First coordinates, for one-dimensional consumers.
    pub fn first_coords(&self) -> Vec<f64> {
        self.points.iter().map(|p| p[0]).collect()
    }
}

impl DesignSpec {
    pub fn fixed_1d(points: &[f64]) -> Result<Self> {
        let d = DesignSpec::Fixed {
            points: points.iter().map(|&x| vec![x]).collect(),
        };
        d.validate()?;
        Ok(d)
    }

    /// Equispaced fixed design `x_i = (i - 1/2)/n`, `i = 1..n`.
    pub fn equispaced(n: usize) -> Self {
        DesignSpec::Fixed {
            points: (1..=n).map(|i| vec![(i as f64 - 0.5) / n as f64]).collect(),
        }
    }

    pub fn uniform(dim: usize) -> Self {
        DesignSpec::Random {
            law: CovariateLaw::Uniform { dim },
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DesignSpec::Fixed { points } => points.first().map_or(0, |p| p.len()),
            DesignSpec::Random {
                law: CovariateLaw::Uniform { dim },
            } => *dim,
            DesignSpec::Random {
                law: CovariateLaw::Beta { .. },
            } => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DesignSpec::Fixed { points } => {
                let d = points
                    .first()
                    .ok_or_else(|| Error::InvalidArgument("fixed design has no points".into()))?
                    .len();
                if d == 0 {
                    return Err(Error::InvalidArgument("design points have dimension 0".into()));
                }
                for p in points {
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
                Ok(())
            }
            DesignSpec::Random {
                law: CovariateLaw::Uniform { dim },
            } => {
                if *dim == 0 || *dim > 16 {
                    return Err(Error::InvalidArgument(format!(
                        "uniform law dimension must lie in 1..=16, got {dim}"
                    )));
                }
                Ok(())
            }
            DesignSpec::Random {
                law: CovariateLaw::Beta { a, b },
            } => {
                if !(*a >= 1.0 && *b >= 1.0 && a.is_finite() && b.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "beta law needs a, b >= 1, got ({a}, {b})"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn is_fixed(&self) -> bool {
        matches!(self, DesignSpec::Fixed { .. })
    }

    /// Density of a one-dimensional random law at `x`.
    pub fn density_1d(&self, x: f64) -> f64 {
        match self {
            DesignSpec::Random {
                law: CovariateLaw::Beta { a, b },
            } => {
                if !(0.0..=1.0).contains(&x) {
                    return 0.0;
                }
                ((a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - ln_beta(*a, *b)).exp()
            }
            _ => 1.0,
        }
    }

    /// Averaging rule for `∫ · dQ`: the empirical measure for fixed designs,
    /// composite Gauss–Legendre (16 × 16 nodes) for one-dimensional laws and
    /// `2^14` Halton points for `d ≥ 2`.
    pub fn averaging_rule(&self) -> Result<PointRule> {
        self.averaging_rule_with(AVG_PANELS)
    }

    /// Same rule with half the panels; the difference to
    /// [`averaging_rule`](Self::averaging_rule) estimates quadrature error.
    pub fn coarse_averaging_rule(&self) -> Result<PointRule> {
        self.averaging_rule_with(AVG_PANELS / 2)
    }

    /// Rule with `panels` Gauss–Legendre panels of 16 nodes (one-dimensional
    /// laws) or `2^10·panels` Halton points (`d ≥ 2`). Empirical designs
    /// ignore `panels`.
    pub fn averaging_rule_panels(&self, panels: usize) -> Result<PointRule> {
        self.averaging_rule_with(panels)
    }

    fn averaging_rule_with(&self, panels: usize) -> Result<PointRule> {
        self.validate()?;
        match self {
            DesignSpec::Fixed { points } => {
                let w = 1.0 / points.len() as f64;
                Ok(PointRule {
                    points: points.clone(),
                    weights: vec![w; points.len()],
                })
            }
            DesignSpec::Random {
                law: CovariateLaw::Uniform { dim },
            } if *dim >= 2 => {
                let m = QMC_POINTS * panels / AVG_PANELS;
                let w = 1.0 / m as f64;
                Ok(PointRule {
                    points: (1..=m as u64).map(|i| halton_point(i, *dim)).collect(),
                    weights: vec![w; m],
                })
            }
            DesignSpec::Random { .. } => {
                let rule = composite_legendre(0.0, 1.0, panels, AVG_NODES_PER_PANEL)?;
                let mut weights: Vec<f64> = rule
                    .nodes
                    .iter()
                    .zip(&rule.weights)
                    .map(|(&x, &w)| w * self.density_1d(x))
                    .collect();
                let total: f64 = weights.iter().sum();
                weights.iter_mut().for_each(|w| *w /= total);
                Ok(PointRule {
                    points: rule.nodes.iter().map(|&x| vec![x]).collect(),
                    weights,
                })
            }
        }
    }

    /// Draws `n` covariates from a random law.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
        self.validate()?;
        match self {
            DesignSpec::Fixed { .. } => Err(Error::InvalidArgument(
                "cannot sample from a fixed design".into(),
            )),
            DesignSpec::Random {
                law: CovariateLaw::Uniform { dim },
            } => Ok((0..n)
                .map(|_| (0..*dim).map(|_| rng.random::<f64>()).collect())
                .collect()),
            DesignSpec::Random {
                law: CovariateLaw::Beta { a, b },
            } => {
                let beta = Beta::new(*a, *b).map_err(|e| Error::InvalidArgument(e.to_string()))?;
                Ok((0..n).map(|_| vec![beta.sample(rng)]).collect())
            }
        }
    }
}
