use std::sync::Arc;

use proptest::prelude::*;

use hetreg::model::{
    density_mass, hellinger_bound_values, hellinger_sq_point, hellinger_sq_values, kl_values, var_values,
};
use hetreg::posterior::{log_posterior, Dataset};
use hetreg::priors::{jn_schedule, rate_theoretical, PriorKind, RateSpec, SplinePriorConfig};
use hetreg::spline::{project, SplineBasis};
use hetreg::theory::{covering_number, BoundCheckReport, BoundKind};
use hetreg::{CoefficientVector, DesignSpec, Func, FunctionPair};

fn basis_strategy() -> impl Strategy<Value = (usize, usize)> {
    (1usize..=4, 1usize..=32)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partition_of_unity((q, k) in basis_strategy(), x in 0.0f64..=1.0) {
        let b = SplineBasis::new(q, k).unwrap();
        let v = b.eval(x).unwrap();
        prop_assert_eq!(v.len(), q + k - 1);
        prop_assert!((v.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(v.iter().all(|&b| b >= 0.0));
        prop_assert!(v.iter().filter(|&&b| b != 0.0).count() <= q);
    }

    #[test]
    fn support_length((q, k) in basis_strategy(), j_frac in 0.0f64..1.0) {
        let b = SplineBasis::new(q, k).unwrap();
        let j = ((j_frac * b.dim() as f64) as usize).min(b.dim() - 1);
        let (lo, hi) = b.support(j);
        prop_assert!(hi - lo <= q as f64 / k as f64 + 1e-12);
    }

    #[test]
    fn coefficient_norm_equivalence(q in 1usize..=4, j in 4usize..=64, seed in any::<u64>()) {
        // √J‖g_β‖_{L²} / ‖β‖ for uniform Q; midpoint rule on a grid fine
        // enough for piecewise cubics
        let basis = Arc::new(SplineBasis::with_dim(q, j).unwrap());
        let mut rng = hetreg::rng::seeded(seed);
        let beta: Vec<f64> = (0..j).map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)).collect();
        let g = CoefficientVector::new(basis, beta.clone()).unwrap();
        let m = 20_000;
        let l2 = ((0..m).map(|i| g.eval((i as f64 + 0.5) / m as f64).unwrap().powi(2)).sum::<f64>() / m as f64).sqrt();
        let norm = beta.iter().map(|b| b * b).sum::<f64>().sqrt();
        let ratio = (j as f64).sqrt() * l2 / norm;
        prop_assert!((0.15..=1.2).contains(&ratio), "ratio {}", ratio);
    }

    #[test]
    fn projection_reproduces_splines(q in 1usize..=4, j in 4usize..=16, seed in any::<u64>()) {
        let basis = Arc::new(SplineBasis::with_dim(q, j).unwrap());
        let mut rng = hetreg::rng::seeded(seed);
        let beta: Vec<f64> = (0..j).map(|_| rand::Rng::random_range(&mut rng, -2.0..2.0)).collect();
        let g = CoefficientVector::new(basis.clone(), beta).unwrap();
        let p = project(&basis, &|x| g.eval(x).unwrap(), &DesignSpec::uniform(1)).unwrap();
        prop_assert!(p.sup_error <= 1e-10, "{}", p.sup_error);
    }

    #[test]
    fn pointwise_divergence_bounds(
        e1 in -3.0f64..3.0, e2 in -3.0f64..3.0,
        f1 in (0.1f64).ln()..(10.0f64).ln(), f2 in (0.1f64).ln()..(10.0f64).ln(),
    ) {
        let h = hellinger_sq_values(e1, f1, e2, f2);
        prop_assert_eq!(h, hellinger_sq_values(e2, f2, e1, f1));
        prop_assert!((0.0..=2.0).contains(&h));
        prop_assert!(kl_values(e1, f1, e2, f2) >= 0.0);
        prop_assert!(var_values(e1, f1, e2, f2) >= 0.0);
        prop_assert!(h <= hellinger_bound_values(e1, f1, e2, f2) + 1e-15);
    }

    #[test]
    fn hellinger_point_symmetric(e1 in -3.0f64..3.0, v1 in 0.1f64..10.0, e2 in -3.0f64..3.0, v2 in 0.1f64..10.0, x in 0.0f64..1.0) {
        let a = FunctionPair::new(Func::analytic("a", move |t| e1 + t), Func::Constant(v1.ln()));
        let b = FunctionPair::new(Func::Constant(e2), Func::analytic("b", move |t| v2.ln() * t));
        prop_assert_eq!(hellinger_sq_point(&a, &b, &[x]), hellinger_sq_point(&b, &a, &[x]));
    }

    #[test]
    fn density_normalized(eta in -3.0f64..3.0, v in 0.1f64..10.0) {
        prop_assert!((density_mass(eta, v).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn rates_decrease_in_n(alpha in 0.5f64..5.0, gamma in 0.5f64..5.0, k_eta in 0usize..4, k_f in 0usize..4, n in 2u64..100_000) {
        for prior in [PriorKind::Spline, PriorKind::RescaledSe, PriorKind::IntegratedBm { k_eta, k_f }] {
            let spec = RateSpec { alpha, gamma, d: 1, prior };
            prop_assert!(rate_theoretical(&spec, n + 1).unwrap() < rate_theoretical(&spec, n).unwrap());
        }
        let spec = RateSpec::spline(alpha, gamma);
        prop_assert!(jn_schedule(&spec, 2 * n).unwrap() >= jn_schedule(&spec, n).unwrap());
    }

    #[test]
    fn matched_integrated_bm_rate(k_eta in 0usize..5, k_f in 0usize..5, n in 2u64..1_000_000) {
        let alpha = k_eta as f64 + 0.5;
        let gamma = k_f as f64 + 0.5;
        let spec = RateSpec { alpha, gamma, d: 1, prior: PriorKind::IntegratedBm { k_eta, k_f } };
        let n_f = n as f64;
        let want = n_f.powf(-alpha / (1.0 + 2.0 * alpha)).max(n_f.powf(-gamma / (1.0 + 2.0 * gamma)));
        let got = rate_theoretical(&spec, n).unwrap();
        prop_assert!((got - want).abs() <= 1e-14 * want, "{} vs {}", got, want);
    }

    #[test]
    fn log_posterior_permutation_and_additivity(seed in any::<u64>(), n in 2usize..40) {
        let basis = Arc::new(SplineBasis::with_dim(3, 5).unwrap());
        let mut rng = hetreg::rng::seeded(seed);
        let mut draw = |lo: f64, hi: f64| rand::Rng::random_range(&mut rng, lo..hi);
        let x: Vec<f64> = (0..n).map(|_| draw(0.0, 1.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| draw(-2.0, 2.0)).collect();
        let eta = CoefficientVector::new(basis.clone(), (0..5).map(|_| draw(-1.0, 1.0)).collect()).unwrap();
        let f = CoefficientVector::new(basis.clone(), (0..5).map(|_| draw(-1.0, 1.0)).collect()).unwrap();
        let prior = SplinePriorConfig::normal(5);
        let data = Dataset::new(x.clone(), y.clone(), DesignSpec::uniform(1)).unwrap();
        let lp = log_posterior(&eta, &f, &data, &prior, &basis).unwrap();
        let rev = Dataset::new(x.iter().rev().copied().collect(), y.iter().rev().copied().collect(), DesignSpec::uniform(1)).unwrap();
        let lp_rev = log_posterior(&eta, &f, &rev, &prior, &basis).unwrap();
        prop_assert!((lp - lp_rev).abs() <= 1e-12 * lp.abs().max(1.0));
        // splitting the data adds log-likelihoods; the prior is counted once
        let h = n / 2;
        let a = Dataset::new(x[..h].to_vec(), y[..h].to_vec(), DesignSpec::uniform(1)).unwrap();
        let b = Dataset::new(x[h..].to_vec(), y[h..].to_vec(), DesignSpec::uniform(1)).unwrap();
        let lpa = log_posterior(&eta, &f, &a, &prior, &basis).unwrap();
        let lpb = log_posterior(&eta, &f, &b, &prior, &basis).unwrap();
        let log_prior = prior.log_density(&eta.beta) + prior.log_density(&f.beta);
        prop_assert!((lpa + lpb - log_prior - lp).abs() <= 1e-10 * lp.abs().max(1.0));
    }

    #[test]
    fn report_pass_recomputable(emp in -10.0f64..10.0, bound in -10.0f64..10.0, allow in 0.0f64..1.0, kind in 0usize..3) {
        let kind = [BoundKind::Upper, BoundKind::Lower, BoundKind::TwoSided][kind];
        let r = BoundCheckReport::new("p", kind, emp, bound, allow);
        prop_assert_eq!(r.pass, r.margin >= -r.allowance);
        prop_assert_eq!(r.pass, r.recompute_pass());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn covering_sandwich(eps in 0.2f64..1.0, r in 0.5f64..1.5, dim in 1usize..=3) {
        let c = covering_number(eps, r, dim).unwrap();
        if c.method == "lattice" {
            prop_assert!(c.within_bounds(), "{:?}", c);
        }
        prop_assert!(c.net_size as f64 <= c.upper);
    }
}
