//! Named batches of theory checks with fixed, desk-scale parameters, as run
//! by `hetreg verify`.

use std::str::FromStr;
use std::sync::Arc;

use serde_json::json;

use crate::design::DesignSpec;
use crate::error::{Error, Result};
use crate::func::{Func, FunctionPair};
use crate::priors::{uniform_grid, GPPriorConfig, GpKind, SplinePriorConfig};
use crate::rng::{derive_seed, seeded};
use crate::spline::SplineBasis;
use crate::theory::{
    approximation_rate_check, concentration_sweep, covering_number, holder_generator, random_spline_pair,
    rescaled_se_moment_check, tail_probability_mc, verify_gp_sieve, verify_hellinger_entropy_bound,
    verify_hellinger_upper_bound, verify_lemma2, BoundCheckReport, BoundKind,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Lemma2,
    Hellinger,
    Covering,
    Entropy,
    Tail,
    Concentration,
    Gp,
    Approximation,
    All,
}

impl Suite {
    pub const NAMES: [&'static str; 9] = [
        "lemma2",
        "hellinger",
        "covering",
        "entropy",
        "tail",
        "concentration",
        "gp",
        "approximation",
        "all",
    ];
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "lemma2" => Suite::Lemma2,
            "hellinger" => Suite::Hellinger,
            "covering" => Suite::Covering,
            "entropy" => Suite::Entropy,
            "tail" => Suite::Tail,
            "concentration" => Suite::Concentration,
            "gp" => Suite::Gp,
            "approximation" => Suite::Approximation,
            "all" => Suite::All,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown suite '{other}', expected one of {}",
                    Suite::NAMES.join(", ")
                )))
            }
        })
    }
}

/// Spline truth used by the concentration suite.
pub fn concentration_truth(basis: &Arc<SplineBasis>) -> Result<FunctionPair> {
    let j = basis.dim();
    let eta: Vec<f64> = (0..j).map(|i| 0.5 - 0.4 * i as f64).collect();
    let f: Vec<f64> = (0..j).map(|i| 0.2 * (-1f64).powi(i as i32)).collect();
    Ok(FunctionPair::new(Func::spline(basis.clone(), eta)?, Func::spline(basis.clone(), f)?))
}

/// Runs a suite and returns its reports in a fixed order. Each check gets
/// its own stream derived from `seed`.
pub fn run_suite(suite: Suite, seed: u64) -> Result<Vec<BoundCheckReport>> {
    let rng_for = |tag: u64| seeded(derive_seed(seed, &[tag]));
    let design = DesignSpec::uniform(1);
    let mut out = Vec::new();
    let all = suite == Suite::All;
    if all || suite == Suite::Lemma2 {
        let basis = Arc::new(SplineBasis::with_dim(4, 8)?);
        let mut rng = rng_for(1);
        let pairs = (0..10_000)
            .map(|_| random_spline_pair(&basis, 1.0, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        out.push(verify_lemma2(&pairs, 1.0, &design)?);
    }
    if all || suite == Suite::Hellinger {
        out.push(verify_hellinger_upper_bound(100_000, 1.0, &mut rng_for(2)));
    }
    if all || suite == Suite::Covering {
        for (eps, r, dim) in [(0.1, 1.0, 1), (0.25, 1.0, 2), (0.5, 1.0, 3)] {
            let c = covering_number(eps, r, dim)?;
            let mut rep = BoundCheckReport::new("covering-number", BoundKind::Upper, c.net_size as f64, c.upper, 0.0)
                .with_details(json!({ "eps": eps, "radius": r, "dim": dim, "lower": c.lower, "method": c.method }));
            if !c.within_bounds() {
                rep = rep.fail_with("net size below the volume lower bound");
            }
            out.push(rep);
        }
    }
    if all || suite == Suite::Entropy {
        let etas: Vec<Func> = (0..=20).map(|i| Func::Constant(i as f64 * 0.05)).collect();
        let fs: Vec<Func> = (0..=20).map(|i| Func::Constant(-0.5 + i as f64 * 0.05)).collect();
        out.push(verify_hellinger_entropy_bound(&etas, &fs, 0.1, 1.0, &design)?);
    }
    if all || suite == Suite::Tail {
        let basis = Arc::new(SplineBasis::with_dim(4, 10)?);
        let prior = SplinePriorConfig::normal(10);
        let mut rng = rng_for(5);
        for m in [2.5, 3.0, 3.5] {
            out.push(tail_probability_mc(&prior, &basis, m, 100_000, &mut rng)?);
        }
    }
    if all || suite == Suite::Concentration {
        let mut rng = rng_for(6);
        for j in [2, 3] {
            let basis = Arc::new(SplineBasis::with_dim(2, j)?);
            let truth = concentration_truth(&basis)?;
            let (rep, ests) = concentration_sweep(
                &SplinePriorConfig::normal(j),
                &basis,
                &truth,
                &[0.1, 0.2, 0.3],
                1.0,
                20_000,
                &design,
                &mut rng,
            )?;
            out.push(rep);
            out.extend(ests.into_iter().map(|e| e.report));
        }
    }
    if all || suite == Suite::Gp {
        let mut moment_cfg = GPPriorConfig::rescaled_se_default(32);
        moment_cfg.kind = GpKind::RescaledSe {
            shape: 25.0,
            rate: 1.0,
            dim: 1,
        };
        out.push(rescaled_se_moment_check(&moment_cfg, 1000, &mut rng_for(7))?);
        let cfg = GPPriorConfig::rescaled_se_default(64);
        let truth = vec![0.0; cfg.grid.len()];
        debug_assert_eq!(cfg.grid, uniform_grid(64));
        let (rep, _) = verify_gp_sieve(&cfg, &truth, &[1.0, 0.5, 0.25], 20_000, &mut rng_for(8))?;
        out.push(rep);
    }
    if all || suite == Suite::Approximation {
        for alpha in [0.6, 1.0, 1.3] {
            let g = holder_generator(alpha);
            out.push(approximation_rate_check(alpha, &*g, &[8, 16, 32, 64], 4)?.report);
        }
    }
    Ok(out)
}
