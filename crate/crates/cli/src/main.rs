use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use hetreg::experiment::{
    contraction_experiment, default_contraction_config, fit_once, make_truth, run_seed, truth_seed,
    write_dataset_csv, ExperimentConfig, SCHEMA_VERSION,
};
use hetreg::func::{Func, FunctionPair};
use hetreg::model::avg_divergences;
use hetreg::posterior::{summarize, ChainSummary};
use hetreg::priors::{jn_schedule, rate_theoretical, PriorKind, RateSpec};
use hetreg::spline::SplineBasis;
use hetreg::suite::{run_suite, Suite};
use hetreg::Error;

#[derive(Parser)]
#[command(name = "hetreg", version, about = "Heteroscedastic nonparametric regression: simulation, fitting and checks")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON configuration file
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the base seed
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true, value_name = "DIR")]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a truth and one dataset, written as CSV
    Simulate {
        /// Sample size (default: first entry of the config's n grid)
        #[arg(long)]
        n: Option<u64>,
    },
    /// One posterior fit: chain CSV and summary JSON
    Fit {
        #[arg(long)]
        n: Option<u64>,
        /// Replicate index used to derive the run seed
        #[arg(long, default_value_t = 0)]
        replicate: usize,
    },
    /// Averaged divergences between two parameters
    Divergence(DivergenceArgs),
    /// Contraction rates and dimension schedules
    Rates(RatesArgs),
    /// Run a batch of theory checks, one JSON line per report
    Verify {
        #[arg(long, default_value = "all", value_parser = Suite::NAMES)]
        suite: String,
    },
    /// Full contraction experiment
    Contract,
}

#[derive(Args)]
struct DivergenceArgs {
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    eta1: f64,
    #[arg(long, default_value_t = 1.0)]
    v1: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    eta2: f64,
    #[arg(long, default_value_t = 1.0)]
    v2: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum PriorArg {
    Spline,
    RescaledSe,
    IntegratedBm,
}

#[derive(Args)]
struct RatesArgs {
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    #[arg(long, default_value_t = 2.0)]
    gamma: f64,
    /// Sample sizes; a single value prints only the rate
    #[arg(long, value_delimiter = ',')]
    n: Vec<u64>,
    /// Prior kind; all kinds when omitted
    #[arg(long, value_enum)]
    prior: Option<PriorArg>,
    #[arg(long, default_value_t = 1)]
    d: usize,
    #[arg(long, default_value_t = 1)]
    k_eta: usize,
    #[arg(long, default_value_t = 1)]
    k_f: usize,
}

/// Either a constant parameter or a pair of spline coefficient vectors.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
enum ParamSpec {
    Constant { eta: f64, v: f64 },
    Spline { order: usize, eta_coeffs: Vec<f64>, f_coeffs: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DivergenceConfig {
    theta1: ParamSpec,
    theta2: ParamSpec,
}

impl ParamSpec {
    fn build(&self) -> hetreg::Result<FunctionPair> {
        match self {
            ParamSpec::Constant { eta, v } => {
                if !(*v > 0.0 && v.is_finite()) {
                    return Err(Error::InvalidSpec(format!("v: must be positive, got {v}")));
                }
                Ok(FunctionPair::constant(*eta, *v))
            }
            ParamSpec::Spline { order, eta_coeffs, f_coeffs } => {
                if eta_coeffs.len() != f_coeffs.len() {
                    return Err(Error::InvalidSpec("eta_coeffs and f_coeffs must have equal length".into()));
                }
                let basis = Arc::new(SplineBasis::with_dim(*order, eta_coeffs.len())?);
                Ok(FunctionPair::new(
                    Func::spline(basis.clone(), eta_coeffs.clone())?,
                    Func::spline(basis, f_coeffs.clone())?,
                ))
            }
        }
    }
}

/// Failure classes mapped to exit statuses.
enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_)
            | Error::InvalidSpec(_)
            | Error::Precondition(_)
            | Error::Domain { .. }
            | Error::DimensionMismatch { .. } => Failure::Validation(e.into()),
            _ => Failure::Runtime(e.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast::<Error>() {
            Ok(e) => e.into(),
            Err(e) => Failure::Runtime(e),
        }
    }
}

type CliResult = std::result::Result<(), Failure>;

fn load_config(common: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => default_contraction_config(PathBuf::from("hetreg-out")),
    };
    if let Some(s) = common.seed {
        cfg.seeds.base = s;
    }
    if let Some(o) = &common.output {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

fn output_dir(common: &Common, fallback: &Path) -> anyhow::Result<PathBuf> {
    let dir = common.output.clone().unwrap_or_else(|| fallback.to_path_buf());
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn simulate(common: &Common, n: Option<u64>) -> CliResult {
    let cfg = load_config(common)?;
    let n = n.unwrap_or(cfg.n_grid[0]);
    check_n(n)?;
    let truth = make_truth(cfg.rate.alpha, cfg.rate.gamma, cfg.v_min, truth_seed(cfg.seeds.base))?;
    let mut rng = hetreg::rng::seeded(run_seed(cfg.seeds.base, n, 0));
    let data = hetreg::experiment::gen_data(&truth.pair, n as usize, &cfg.design.spec(), &mut rng)?;
    let dir = output_dir(common, &cfg.output_dir)?;
    let path = dir.join("data.csv");
    write_dataset_csv(&data, &path)?;
    let meta = serde_json::json!({ "schema_version": SCHEMA_VERSION, "n": n, "truth": truth.meta });
    fs::write(dir.join("truth.json"), serde_json::to_string_pretty(&meta).map_err(anyhow::Error::from)?)
        .map_err(anyhow::Error::from)?;
    println!("{}", path.display());
    Ok(())
}

fn check_n(n: u64) -> Result<(), Failure> {
    if n == 0 || n > hetreg::experiment::MAX_N {
        return Err(Error::InvalidSpec(format!("n: must lie in 1..={}", hetreg::experiment::MAX_N)).into());
    }
    Ok(())
}

#[derive(Serialize)]
struct FitReport {
    schema_version: u32,
    n: u64,
    replicate: usize,
    seed: u64,
    dim: usize,
    scales: Option<(f64, f64)>,
    acceptance_eta: f64,
    acceptance_f: f64,
    summary: ChainSummary,
}

fn fit(common: &Common, n: Option<u64>, replicate: usize) -> CliResult {
    let cfg = load_config(common)?;
    let n = n.unwrap_or(cfg.n_grid[0]);
    check_n(n)?;
    let truth = make_truth(cfg.rate.alpha, cfg.rate.gamma, cfg.v_min, truth_seed(cfg.seeds.base))?;
    let seed = run_seed(cfg.seeds.base, n, replicate);
    let out = fit_once(&cfg, &truth.pair, n, seed)?;
    let summary = summarize(
        &out.chain,
        Some((&truth.pair, &out.data.design)),
        &cfg.quantile_levels,
        &[],
    )?;
    let dir = output_dir(common, &cfg.output_dir)?;
    out.chain.write_csv(&dir.join("chain.csv"))?;
    let report = FitReport {
        schema_version: SCHEMA_VERSION,
        n,
        replicate,
        seed,
        dim: out.dim,
        scales: out.scales,
        acceptance_eta: out.chain.acceptance_eta,
        acceptance_f: out.chain.acceptance_f,
        summary,
    };
    let json = serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)?;
    fs::write(dir.join("summary.json"), &json).map_err(anyhow::Error::from)?;
    println!("{json}");
    Ok(())
}

fn divergence(common: &Common, args: &DivergenceArgs) -> CliResult {
    let cfg = match &common.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<DivergenceConfig>(&text)
                .map_err(|e| Error::InvalidSpec(format!("config: {e}")))?
        }
        None => DivergenceConfig {
            theta1: ParamSpec::Constant { eta: args.eta1, v: args.v1 },
            theta2: ParamSpec::Constant { eta: args.eta2, v: args.v2 },
        },
    };
    let (a, b) = (cfg.theta1.build()?, cfg.theta2.build()?);
    let report = avg_divergences(&a, &b, &hetreg::design::DesignSpec::uniform(1))?;
    let json = serde_json::json!({ "schema_version": SCHEMA_VERSION, "theta1": cfg.theta1, "theta2": cfg.theta2, "report": report });
    println!("{json}");
    Ok(())
}

fn rates(args: &RatesArgs) -> CliResult {
    let kinds: Vec<(&str, PriorKind)> = match args.prior {
        Some(PriorArg::Spline) => vec![("spline", PriorKind::Spline)],
        Some(PriorArg::RescaledSe) => vec![("rescaled-se", PriorKind::RescaledSe)],
        Some(PriorArg::IntegratedBm) => vec![(
            "integrated-bm",
            PriorKind::IntegratedBm { k_eta: args.k_eta, k_f: args.k_f },
        )],
        None => vec![
            ("spline", PriorKind::Spline),
            ("rescaled-se", PriorKind::RescaledSe),
            ("integrated-bm", PriorKind::IntegratedBm { k_eta: args.k_eta, k_f: args.k_f }),
        ],
    };
    let spec_for = |prior| RateSpec {
        alpha: args.alpha,
        gamma: args.gamma,
        d: args.d,
        prior,
    };
    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    if args.n.len() == 1 && kinds.len() == 1 {
        let eps = rate_theoretical(&spec_for(kinds[0].1), args.n[0])?;
        writeln!(w, "{eps:.5}").map_err(anyhow::Error::from)?;
        return Ok(());
    }
    let grid: Vec<u64> = if args.n.is_empty() {
        (0..8).map(|i| 100u64 << i).collect()
    } else {
        args.n.clone()
    };
    writeln!(w, "prior,n,epsilon,j_n").map_err(anyhow::Error::from)?;
    for (name, kind) in kinds {
        let spec = spec_for(kind);
        for &n in &grid {
            let eps = rate_theoretical(&spec, n)?;
            let j = match kind {
                PriorKind::Spline => jn_schedule(&spec, n)?.to_string(),
                _ => String::new(),
            };
            writeln!(w, "{name},{n},{eps},{j}").map_err(anyhow::Error::from)?;
        }
    }
    Ok(())
}

fn verify(common: &Common, suite: &str) -> CliResult {
    let suite: Suite = suite.parse()?;
    let reports = run_suite(suite, common.seed.unwrap_or(0))?;
    let mut lines = String::new();
    for r in &reports {
        lines.push_str(&r.to_json_line());
        lines.push('\n');
    }
    print!("{lines}");
    if let Some(dir) = &common.output {
        fs::create_dir_all(dir).map_err(anyhow::Error::from)?;
        fs::write(dir.join("verify.jsonl"), &lines).map_err(anyhow::Error::from)?;
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.pass).map(|r| r.check.as_str()).collect();
    if !failed.is_empty() {
        return Err(Failure::Validation(anyhow::anyhow!("failed checks: {}", failed.join(", "))));
    }
    Ok(())
}

fn contract(common: &Common) -> CliResult {
    let cfg = load_config(common)?;
    let report = contraction_experiment(&cfg)?;
    report.write(&cfg.output_dir)?;
    println!(
        "{}",
        serde_json::json!({
            "slope": report.slope.slope,
            "slope_se": report.slope.slope_se,
            "theoretical_exponent": report.theoretical_exponent,
            "theoretical_local_slope": report.theoretical_local_slope,
            "nonincreasing_steps": report.nonincreasing_steps,
            "included_runs": report.included_runs,
            "degraded_runs": report.degraded_runs,
            "output": cfg.output_dir,
        })
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Simulate { n } => simulate(&cli.common, *n),
        Command::Fit { n, replicate } => fit(&cli.common, *n, *replicate),
        Command::Divergence(args) => divergence(&cli.common, args),
        Command::Rates(args) => rates(args),
        Command::Verify { suite } => verify(&cli.common, suite),
        Command::Contract => contract(&cli.common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
