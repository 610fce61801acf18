//! Command-line surface for the `lrv` library: long-run variance estimation,
//! classical and fixed-b confidence intervals, simulated critical values,
//! coverage and consistency studies, model simulation, and machine-precision
//! identity checks on finite-state chains.
//!
//! Every subcommand emits CSV (stdout or `--out`) with a `#`-prefixed
//! provenance line carrying the full configuration, so any output can be
//! reproduced bit-exactly from its own header. Flags can also be supplied
//! through `--config <file>` holding `key=value` lines; explicit
//! command-line flags win over file entries.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::fmt::Write as _;
use std::fs;
use std::io::Read as _;
use std::path::{Path, PathBuf};

use lrv::chain_oracle::{
    bivariate_poisson_solve, decomposition_report, pair_sum_terms, poisson_solve,
    verify_bivariate_poisson, verify_martingale_property, FiniteChain,
};
use lrv::ci::{classical_ci, fixedb_ci};
use lrv::experiments::{
    derive_seed, run_consistency, run_coverage, run_reference_grid, ConsistencyConfig, CoverageConfig,
    CoverageModel,
};
use lrv::fixedb::{CriticalValueTable, KbConfig};
use lrv::lagwindow::{lag_window_estimate, ScalarSeries};
use lrv::samplers::{
    generate_poisson_data, rwm_sample, simulate_finite_chain, simulate_garch, tune_kappa,
    GarchParams, PoissonRegModel, PoissonRegTruth, RngStream, RwmConfig,
};
use lrv::ustat::{clt_normalize, UStatKernel};
use lrv::windows::{BandwidthRule, WindowFunction, WindowKind};

#[derive(Parser)]
#[command(name = "lrv")]
#[command(about = "Long-run variance estimation and fixed-b inference for Markov chains")]
#[command(version)]
struct Cli {
    /// Read additional `key=value` flag lines from a file; explicit
    /// command-line flags take precedence over file entries.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Commands,
}

#[derive(Subcommand)]
enum Commands {
    /// Estimate the long-run variance of a series with a lag window
    Estimate(EstimateArgs),
    /// Confidence interval for a series mean (classical or fixed-b)
    Ci(CiArgs),
    /// Simulate fixed-b critical values for one window
    Critvals(CritvalsArgs),
    /// Simulate the full reference quantile grid and compare
    Refgrid(RefgridArgs),
    /// Coverage study of both interval families over a method grid
    Coverage(CoverageArgs),
    /// Estimator consistency and rate study on a finite chain
    Consistency(ConsistencyArgs),
    /// Machine-precision identity checks on a finite-state chain
    Oracle(OracleArgs),
    /// Simulate a model series
    Simulate(SimulateArgs),
    /// Standardized U-statistics over replicate chain paths
    Ustat(UstatArgs),
}

#[derive(Args)]
struct EstimateArgs {
    /// Input series: one-column CSV with a `value` header or a plain
    /// whitespace/comma-separated stream; `-` reads stdin.
    #[arg(long, default_value = "-")]
    input: PathBuf,
    /// Window kind: bartlett | quadratic | truncated | parzen.
    #[arg(long, value_parser = parse_window)]
    window: WindowKind,
    /// Window parameter b.
    #[arg(long, default_value_t = 1.0)]
    b: f64,
    /// Bandwidth rule: `delta:<d>` for c_n = n^d, or `fixedb` for c_n = n.
    #[arg(long = "cn-rule", value_parser = parse_cn_rule, default_value = "delta:0.5")]
    cn_rule: CnRule,
    /// Write CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CiArgs {
    /// Input series (see `estimate`); `-` reads stdin.
    #[arg(long, default_value = "-")]
    input: PathBuf,
    /// Interval family.
    #[arg(long, value_enum)]
    method: MethodArg,
    /// Two-sided level: the interval has nominal coverage 1 − α.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Window kind.
    #[arg(long, value_parser = parse_window, default_value = "bartlett")]
    window: WindowKind,
    /// Bandwidth exponent (classical method; c_n = n^δ).
    #[arg(long)]
    delta: Option<f64>,
    /// Window parameter b (fixed-b method; c_n = n).
    #[arg(long)]
    b: Option<f64>,
    /// Euler grid size for the simulated critical value (fixed-b only).
    #[arg(long, default_value_t = 2000)]
    grid: usize,
    /// Replications for the simulated critical value (fixed-b only).
    #[arg(long, default_value_t = 200_000)]
    reps: usize,
    /// Master seed for the critical-value simulation (fixed-b only).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Classical,
    Fixedb,
}

#[derive(Args)]
struct CritvalsArgs {
    /// Window kind.
    #[arg(long, value_parser = parse_window)]
    window: WindowKind,
    /// Window parameter b.
    #[arg(long)]
    b: f64,
    /// Interval levels α, one output row each.
    #[arg(long, value_delimiter = ',', default_values_t = [0.05])]
    alpha: Vec<f64>,
    /// Monte Carlo replications.
    #[arg(long, default_value_t = 200_000)]
    reps: usize,
    /// Euler grid size.
    #[arg(long, default_value_t = 2000)]
    grid: usize,
    /// Master seed.
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RefgridArgs {
    /// Monte Carlo replications per cell.
    #[arg(long, default_value_t = 200_000)]
    reps: usize,
    /// Euler grid size.
    #[arg(long, default_value_t = 2000)]
    grid: usize,
    /// Master seed (shared across cells: common random numbers).
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Garch,
    Finite,
    Poissonreg,
}

impl ModelArg {
    fn name(self) -> &'static str {
        match self {
            ModelArg::Garch => "garch",
            ModelArg::Finite => "finite",
            ModelArg::Poissonreg => "poissonreg",
        }
    }
}

#[derive(Args)]
struct CoverageArgs {
    /// Data-generating model.
    #[arg(long, value_enum)]
    model: ModelArg,
    /// Window kind used by both interval families.
    #[arg(long, value_parser = parse_window, default_value = "bartlett")]
    window: WindowKind,
    /// Retained series length per replicate.
    #[arg(long, default_value_t = 20_000)]
    n: usize,
    /// Discarded initial steps per replicate.
    #[arg(long, default_value_t = 4_000)]
    burnin: usize,
    /// Monte Carlo replications.
    #[arg(long, default_value_t = 200)]
    reps: usize,
    /// Interval level α.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Classical bandwidth exponents δ (one coverage row each).
    #[arg(long, value_delimiter = ',', default_values_t = [0.3, 0.4, 0.5, 0.6, 0.7])]
    deltas: Vec<f64>,
    /// Fixed-b window parameters b (one coverage row each).
    #[arg(long, value_delimiter = ',',
          default_values_t = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9])]
    bs: Vec<f64>,
    /// Master seed.
    #[arg(long)]
    seed: u64,
    /// Euler grid size for the simulated fixed-b critical values.
    #[arg(long, default_value_t = 1000)]
    kb_grid: usize,
    /// Replications for the simulated fixed-b critical values.
    #[arg(long, default_value_t = 20_000)]
    kb_reps: usize,
    /// GARCH ω (garch model).
    #[arg(long, default_value_t = 1.0)]
    garch_omega: f64,
    /// GARCH α (garch model).
    #[arg(long, default_value_t = 0.1)]
    garch_alpha: f64,
    /// GARCH β (garch model).
    #[arg(long, default_value_t = 0.7)]
    garch_beta: f64,
    /// Transition matrix CSV (finite model); two-state default when absent.
    #[arg(long)]
    chain: Option<PathBuf>,
    /// Per-state functional values (finite model); state indices by default.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    f: Option<Vec<f64>>,
    #[command(flatten)]
    poisson: PoissonArgs,
    /// Posterior mean of the monitored coordinate (poissonreg model);
    /// estimated from a preliminary run when absent.
    #[arg(long)]
    truth: Option<f64>,
    /// Steps in the preliminary run that estimates the truth.
    #[arg(long, default_value_t = 200_000)]
    prelim_n: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Poisson log-linear posterior configuration shared by `coverage`,
/// `simulate` and nothing else; data are generated synthetically and the
/// Metropolis scale is tuned unless given.
#[derive(Args)]
struct PoissonArgs {
    /// Number of groups (poissonreg model).
    #[arg(long, default_value_t = 3)]
    groups: usize,
    /// Number of items per group (poissonreg model).
    #[arg(long, default_value_t = 20)]
    items: usize,
    /// Common exposure count for every cell (poissonreg model).
    #[arg(long, default_value_t = 1000.0)]
    exposure: f64,
    /// Index of the monitored coordinate in the parameter vector
    /// (poissonreg model); 1 is the first group effect.
    #[arg(long, default_value_t = 1)]
    coordinate: usize,
    /// Data-generating intercept.
    #[arg(long, default_value_t = -1.0)]
    gen_mu: f64,
    /// Data-generating free group effects (first `groups − 1`; the last is
    /// their negated sum).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true,
          default_values_t = [0.35, 0.15])]
    gen_alphas: Vec<f64>,
    /// Data-generating interaction variance.
    #[arg(long, default_value_t = 0.1)]
    gen_var_eps: f64,
    /// Data-generating item-effect variance.
    #[arg(long, default_value_t = 0.3)]
    gen_var_beta: f64,
    /// Metropolis proposal scale; tuned toward 23% acceptance when absent.
    #[arg(long)]
    kappa: Option<f64>,
}

#[derive(Args)]
struct ConsistencyArgs {
    /// Transition matrix CSV; two-state default when absent.
    #[arg(long)]
    chain: Option<PathBuf>,
    /// Per-state functional values; state indices by default.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    f: Option<Vec<f64>>,
    /// Window kind.
    #[arg(long, value_parser = parse_window, default_value = "bartlett")]
    window: WindowKind,
    /// Window parameter b.
    #[arg(long, default_value_t = 1.0)]
    b: f64,
    /// Bandwidth exponent (c_n = n^δ; δ = 1 is the fixed-b regime).
    #[arg(long, default_value_t = 0.6)]
    delta: f64,
    /// Sample sizes, one output row each.
    #[arg(long = "n-grid", value_delimiter = ',', default_values_t = [1_000, 10_000, 100_000])]
    n_grid: Vec<usize>,
    /// Replications per sample size.
    #[arg(long, default_value_t = 100)]
    reps: usize,
    /// Master seed.
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CheckArg {
    /// Poisson equation for the per-state functional.
    Poisson,
    /// Bivariate Poisson equation and martingale property for the kernel.
    Bivariate,
    /// Exact decomposition of the variance estimator on a simulated path.
    Decomp,
    /// Pair-sum decomposition identity on a simulated path.
    Pairsum,
}

impl CheckArg {
    fn name(self) -> &'static str {
        match self {
            CheckArg::Poisson => "poisson",
            CheckArg::Bivariate => "bivariate",
            CheckArg::Decomp => "decomp",
            CheckArg::Pairsum => "pairsum",
        }
    }
}

#[derive(Args)]
struct OracleArgs {
    /// Transition matrix: S rows of S comma-separated probabilities.
    #[arg(long)]
    chain: PathBuf,
    /// Which identity to verify.
    #[arg(long, value_enum)]
    check: CheckArg,
    /// Per-state functional values; state indices by default.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    f: Option<Vec<f64>>,
    /// Symmetric S×S kernel CSV (bivariate/pairsum); additive kernel built
    /// from the functional when absent.
    #[arg(long)]
    kernel: Option<PathBuf>,
    /// Simulated path length (decomp/pairsum).
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// Seed for the simulated path (required by decomp/pairsum).
    #[arg(long)]
    seed: Option<u64>,
    /// Window kind (decomp).
    #[arg(long, value_parser = parse_window, default_value = "bartlett")]
    window: WindowKind,
    /// Window parameter b (decomp).
    #[arg(long, default_value_t = 1.0)]
    b: f64,
    /// Bandwidth exponent (decomp; c_n = n^δ).
    #[arg(long, default_value_t = 0.5)]
    delta: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Data-generating model.
    #[arg(long, value_enum)]
    model: ModelArg,
    /// Emitted series length.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Discarded initial steps.
    #[arg(long, default_value_t = 0)]
    burnin: usize,
    /// Master seed.
    #[arg(long)]
    seed: u64,
    /// GARCH ω.
    #[arg(long, default_value_t = 1.0)]
    garch_omega: f64,
    /// GARCH α.
    #[arg(long, default_value_t = 0.1)]
    garch_alpha: f64,
    /// GARCH β.
    #[arg(long, default_value_t = 0.7)]
    garch_beta: f64,
    /// Transition matrix CSV (finite model); two-state default when absent.
    #[arg(long)]
    chain: Option<PathBuf>,
    /// Per-state functional values (finite model); state indices by default.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    f: Option<Vec<f64>>,
    #[command(flatten)]
    poisson: PoissonArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct UstatArgs {
    /// Transition matrix CSV; two-state default when absent.
    #[arg(long)]
    chain: Option<PathBuf>,
    /// Symmetric S×S kernel CSV; additive kernel from the functional when
    /// absent.
    #[arg(long)]
    kernel: Option<PathBuf>,
    /// Per-state functional values (for the default kernel); state indices
    /// by default.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    f: Option<Vec<f64>>,
    /// Observations per replicate path.
    #[arg(long, default_value_t = 2000)]
    n: usize,
    /// Number of replicate paths.
    #[arg(long, default_value_t = 200)]
    reps: usize,
    /// Master seed (replicate i uses stream i).
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> Result<()> {
    let cli = Cli::parse_from(expand_args(std::env::args().collect())?);
    match cli.command {
        Commands::Estimate(a) => cmd_estimate(&a),
        Commands::Ci(a) => cmd_ci(&a),
        Commands::Critvals(a) => cmd_critvals(&a),
        Commands::Refgrid(a) => cmd_refgrid(&a),
        Commands::Coverage(a) => cmd_coverage(&a),
        Commands::Consistency(a) => cmd_consistency(&a),
        Commands::Oracle(a) => cmd_oracle(&a),
        Commands::Simulate(a) => cmd_simulate(&a),
        Commands::Ustat(a) => cmd_ustat(&a),
    }
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn cmd_estimate(a: &EstimateArgs) -> Result<()> {
    let series = ScalarSeries::new(read_series(&a.input)?)?;
    let w = WindowFunction::new(a.window, a.b)?;
    let c_n = a.cn_rule.bandwidth_rule(a.b)?.bandwidth(series.len());
    let est = lag_window_estimate(&series, &w, c_n);
    let mut out = String::new();
    writeln!(
        out,
        "# lrv estimate window={} b={} cn_rule={} n={}",
        a.window.name(),
        a.b,
        a.cn_rule,
        est.n
    )?;
    writeln!(out, "gamma_sq,gamma0,c_n")?;
    writeln!(out, "{},{},{}", est.gamma_sq, est.gamma0, est.c_n)?;
    emit(&a.out, &out)
}

/// Everything a CI run needs beyond the series, resolved before any input
/// is consumed so flag-contract errors beat a blocked stdin read.
enum CiPlan {
    Classical { delta: f64 },
    Fixedb { b: f64, seed: u64 },
}

fn cmd_ci(a: &CiArgs) -> Result<()> {
    let plan = match a.method {
        MethodArg::Classical => CiPlan::Classical {
            delta: a
                .delta
                .ok_or_else(|| anyhow!("--delta is required for --method classical"))?,
        },
        MethodArg::Fixedb => CiPlan::Fixedb {
            b: a.b.ok_or_else(|| anyhow!("--b is required for --method fixedb"))?,
            seed: a.seed.ok_or_else(|| {
                anyhow!("--seed is required for --method fixedb (critical values are simulated)")
            })?,
        },
    };
    let series = ScalarSeries::new(read_series(&a.input)?)?;
    let mut provenance = format!(
        "# lrv ci method={} window={} alpha={} n={}",
        match a.method {
            MethodArg::Classical => "classical",
            MethodArg::Fixedb => "fixedb",
        },
        a.window.name(),
        a.alpha,
        series.len()
    );
    let ci = match plan {
        CiPlan::Classical { delta } => {
            write!(provenance, " delta={delta}")?;
            classical_ci(&series, a.alpha, delta, a.window)?
        }
        CiPlan::Fixedb { b, seed } => {
            let w = WindowFunction::new(a.window, b)?;
            let cfg = KbConfig::new(a.grid, a.reps, seed)?;
            let table = CriticalValueTable::build(&w, &[a.alpha], &cfg)?;
            write!(
                provenance,
                " b={b} grid={} reps={} seed={seed} rejections={}",
                a.grid,
                a.reps,
                table.rejections()
            )?;
            fixedb_ci(&series, a.alpha, &w, &table)?
        }
    };
    let mut out = String::new();
    writeln!(out, "{provenance}")?;
    writeln!(out, "center,lower,upper,half_width,sigma_hat,method,param")?;
    writeln!(
        out,
        "{},{},{},{},{},{},{}",
        ci.center,
        ci.lower,
        ci.upper,
        ci.half_width,
        ci.sigma_hat,
        ci.method.name(),
        ci.method.param()
    )?;
    emit(&a.out, &out)
}

fn cmd_critvals(a: &CritvalsArgs) -> Result<()> {
    let w = WindowFunction::new(a.window, a.b)?;
    let cfg = KbConfig::new(a.grid, a.reps, a.seed)?;
    let table = CriticalValueTable::build(&w, &a.alpha, &cfg)?;
    let attempts = table.rejections() + table.replications();
    let reject_rate = table.rejections() as f64 / attempts as f64;
    let mut out = String::new();
    writeln!(
        out,
        "# lrv critvals window={} b={} reps={} grid={} seed={}",
        a.window.name(),
        a.b,
        a.reps,
        a.grid,
        a.seed
    )?;
    writeln!(out, "window,b,alpha,quantile,reps,grid,seed,reject_rate")?;
    for (alpha, quantile) in table.rows() {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            a.window.name(),
            a.b,
            alpha,
            quantile,
            a.reps,
            a.grid,
            a.seed,
            reject_rate
        )?;
    }
    emit(&a.out, &out)
}

fn cmd_refgrid(a: &RefgridArgs) -> Result<()> {
    let cfg = KbConfig::new(a.grid, a.reps, a.seed)?;
    let cells = run_reference_grid(&cfg)?;
    let mut out = String::new();
    writeln!(out, "# lrv refgrid reps={} grid={} seed={}", a.reps, a.grid, a.seed)?;
    writeln!(out, "window,b,simulated,reference,abs_diff,rejections")?;
    for cell in &cells {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            cell.kind.name(),
            cell.b,
            cell.simulated,
            cell.reference,
            cell.abs_diff(),
            cell.rejections
        )?;
    }
    emit(&a.out, &out)
}

fn cmd_coverage(a: &CoverageArgs) -> Result<()> {
    let mut provenance = format!(
        "# lrv coverage model={} window={} n={} burnin={} reps={} alpha={} seed={} \
         kb_grid={} kb_reps={}",
        a.model.name(),
        a.window.name(),
        a.n,
        a.burnin,
        a.reps,
        a.alpha,
        a.seed,
        a.kb_grid,
        a.kb_reps
    );
    let model = match a.model {
        ModelArg::Garch => {
            let params = garch_params(a.garch_omega, a.garch_alpha, a.garch_beta)?;
            let truth = params.mean_square()?;
            write!(
                provenance,
                " garch_omega={} garch_alpha={} garch_beta={} truth={truth}",
                a.garch_omega, a.garch_alpha, a.garch_beta
            )?;
            CoverageModel::Garch { params, truth }
        }
        ModelArg::Finite => {
            let chain = load_chain(a.chain.as_deref())?;
            let f = state_function(a.f.clone(), chain.n_states())?;
            write!(provenance, " states={} f={}", chain.n_states(), join(&f))?;
            CoverageModel::Finite { chain, f }
        }
        ModelArg::Poissonreg => {
            let setup = poisson_setup(&a.poisson, a.seed)?;
            let truth = match a.truth {
                Some(t) => t,
                None => preliminary_truth(&setup, a.prelim_n, a.seed)?,
            };
            write!(
                provenance,
                " groups={} items={} exposure={} coordinate={} ({}) kappa={} truth={truth} \
                 prelim_n={}",
                a.poisson.groups,
                a.poisson.items,
                a.poisson.exposure,
                setup.coordinate,
                setup.model.parameter_names()[setup.coordinate],
                setup.kappa,
                a.prelim_n
            )?;
            CoverageModel::PoissonReg {
                model: setup.model,
                coordinate: setup.coordinate,
                truth,
                kappa: setup.kappa,
                init: setup.theta_true,
            }
        }
    };
    let cfg = CoverageConfig {
        model,
        kind: a.window,
        n: a.n,
        burn_in: a.burnin,
        replications: a.reps,
        alpha: a.alpha,
        deltas: a.deltas.clone(),
        bs: a.bs.clone(),
        master_seed: a.seed,
        kb_grid_steps: a.kb_grid,
        kb_replications: a.kb_reps,
    };
    let rows = run_coverage(&cfg)?;
    let mut out = String::new();
    writeln!(out, "{provenance}")?;
    writeln!(
        out,
        "model,method,param,window,n,reps,covered,failures,coverage,avg_length,avg_sigma"
    )?;
    for r in &rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.model,
            r.method,
            r.param,
            r.window.name(),
            r.n,
            r.replications,
            r.covered,
            r.failures,
            r.coverage,
            r.avg_length,
            r.avg_sigma
        )?;
    }
    emit(&a.out, &out)
}

fn cmd_consistency(a: &ConsistencyArgs) -> Result<()> {
    let chain = load_chain(a.chain.as_deref())?;
    let f = state_function(a.f.clone(), chain.n_states())?;
    let cfg = ConsistencyConfig {
        chain,
        f: f.clone(),
        kind: a.window,
        b: a.b,
        delta: a.delta,
        n_grid: a.n_grid.clone(),
        replications: a.reps,
        master_seed: a.seed,
    };
    let rows = run_consistency(&cfg)?;
    let mut out = String::new();
    writeln!(
        out,
        "# lrv consistency window={} b={} delta={} reps={} seed={} f={}",
        a.window.name(),
        a.b,
        a.delta,
        a.reps,
        a.seed,
        join(&f)
    )?;
    writeln!(
        out,
        "n,c_n,sigma2,median_abs_error,median_abs_quad,median_abs_remainder,\
         median_abs_zeta,max_residual"
    )?;
    for r in &rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.n,
            r.c_n,
            r.sigma2,
            r.median_abs_error,
            r.median_abs_quad,
            r.median_abs_remainder,
            r.median_abs_zeta,
            r.max_residual
        )?;
    }
    emit(&a.out, &out)
}

fn cmd_oracle(a: &OracleArgs) -> Result<()> {
    let chain = load_chain(Some(&a.chain))?;
    let s = chain.n_states();
    let f = state_function(a.f.clone(), s)?;
    let mut rows: Vec<(String, f64)> = Vec::new();
    let mut provenance = format!(
        "# lrv oracle check={} chain={} states={} f={}",
        a.check.name(),
        a.chain.display(),
        s,
        join(&f)
    );
    match a.check {
        CheckArg::Poisson => {
            let sol = poisson_solve(&chain, &f)?;
            let mut eq_residual = 0.0f64;
            for x in 0..s {
                eq_residual = eq_residual.max((sol.g[x] - sol.pg[x] - sol.h[x]).abs());
            }
            let centered: f64 = chain
                .stationary()
                .iter()
                .zip(&sol.g)
                .map(|(p, g)| p * g)
                .sum();
            rows.push(("equation_residual".into(), eq_residual));
            rows.push(("solution_stationary_mean".into(), centered));
            rows.push(("functional_mean".into(), chain.stationary_mean(&f)?));
        }
        CheckArg::Bivariate => {
            let kernel = load_kernel(a.kernel.as_deref(), &f)?;
            let sol = bivariate_poisson_solve(&chain, kernel.matrix())?;
            rows.push(("equation_residual".into(), verify_bivariate_poisson(&chain, &sol)));
            rows.push(("martingale_residual".into(), verify_martingale_property(&chain, &sol)));
            rows.push(("kernel_mean".into(), sol.theta));
        }
        CheckArg::Decomp => {
            let seed = need_seed(a.seed, "decomp")?;
            let path = simulate_finite_chain(&chain, a.n, &mut RngStream::new(seed, 0));
            let w = WindowFunction::new(a.window, a.b)?;
            let c_n = BandwidthRule::classical(a.delta)?.bandwidth(a.n);
            let report = decomposition_report(&path, &f, &w, c_n, &chain)?;
            write!(
                provenance,
                " n={} seed={seed} window={} b={} delta={} c_n={}",
                a.n,
                a.window.name(),
                a.b,
                a.delta,
                report.c_n
            )?;
            rows.push(("gamma_sq".into(), report.gamma_sq));
            rows.push(("term_diag".into(), report.term_diag));
            rows.push(("term_quad".into(), report.term_quad));
            rows.push(("term_remainder".into(), report.term_remainder));
            rows.push(("term_zeta".into(), report.term_zeta));
            rows.push(("residual".into(), report.residual));
        }
        CheckArg::Pairsum => {
            let seed = need_seed(a.seed, "pairsum")?;
            let path = simulate_finite_chain(&chain, a.n, &mut RngStream::new(seed, 0));
            let kernel = load_kernel(a.kernel.as_deref(), &f)?;
            let pair_weights = |l: usize, j: usize| if j < l { 1.0 } else { 0.0 };
            let terms = pair_sum_terms(&path, kernel.matrix(), &pair_weights, &chain)?;
            write!(provenance, " n={} seed={seed}", a.n)?;
            rows.push(("u_n".into(), terms.u_n));
            rows.push(("term_constant".into(), terms.term_constant));
            rows.push(("term_linear".into(), terms.term_linear));
            rows.push(("term_diag".into(), terms.term_diag));
            rows.push(("term_quad".into(), terms.term_quad));
            rows.push(("zeta_explicit".into(), terms.zeta_explicit));
            rows.push(("zeta_implicit".into(), terms.zeta_implicit));
            rows.push(("zeta_gap".into(), (terms.zeta_explicit - terms.zeta_implicit).abs()));
        }
    }
    let mut out = String::new();
    writeln!(out, "{provenance}")?;
    writeln!(out, "metric,value")?;
    for (metric, value) in &rows {
        writeln!(out, "{metric},{value}")?;
    }
    emit(&a.out, &out)
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let mut provenance = format!(
        "# lrv simulate model={} n={} burnin={} seed={}",
        a.model.name(),
        a.n,
        a.burnin,
        a.seed
    );
    let values: Vec<f64> = match a.model {
        ModelArg::Garch => {
            let params = garch_params(a.garch_omega, a.garch_alpha, a.garch_beta)?;
            write!(
                provenance,
                " garch_omega={} garch_alpha={} garch_beta={}",
                a.garch_omega, a.garch_alpha, a.garch_beta
            )?;
            let mut rng = RngStream::new(a.seed, 0);
            simulate_garch(&params, a.burnin + a.n, &mut rng).u[a.burnin..].to_vec()
        }
        ModelArg::Finite => {
            let chain = load_chain(a.chain.as_deref())?;
            let f = state_function(a.f.clone(), chain.n_states())?;
            write!(provenance, " states={} f={}", chain.n_states(), join(&f))?;
            let mut rng = RngStream::new(a.seed, 0);
            let path = simulate_finite_chain(&chain, a.burnin + a.n, &mut rng);
            path[a.burnin + 1..].iter().map(|&x| f[x]).collect()
        }
        ModelArg::Poissonreg => {
            let setup = poisson_setup(&a.poisson, a.seed)?;
            write!(
                provenance,
                " groups={} items={} exposure={} coordinate={} ({}) kappa={}",
                a.poisson.groups,
                a.poisson.items,
                a.poisson.exposure,
                setup.coordinate,
                setup.model.parameter_names()[setup.coordinate],
                setup.kappa
            )?;
            let model = setup.model;
            let log_target =
                move |theta: &[f64]| model.log_posterior(theta).unwrap_or(f64::NEG_INFINITY);
            let cfg = RwmConfig {
                kappa: setup.kappa,
                proposal_cov: None,
                init: setup.theta_true,
                steps: a.n,
                burn_in: a.burnin,
            };
            let run = rwm_sample(log_target, &cfg, &mut RngStream::new(a.seed, 0))?;
            run.samples.iter().map(|theta| theta[setup.coordinate]).collect()
        }
    };
    let mut out = String::new();
    writeln!(out, "{provenance}")?;
    writeln!(out, "value")?;
    for v in &values {
        writeln!(out, "{v}")?;
    }
    emit(&a.out, &out)
}

fn cmd_ustat(a: &UstatArgs) -> Result<()> {
    let chain = load_chain(a.chain.as_deref())?;
    let f = state_function(a.f.clone(), chain.n_states())?;
    let kernel = load_kernel(a.kernel.as_deref(), &f)?;
    let mut rows = Vec::with_capacity(a.reps);
    for i in 0..a.reps {
        let path = simulate_finite_chain(&chain, a.n, &mut RngStream::new(a.seed, i as u64));
        let clt = clt_normalize(&path, &chain, &kernel)
            .with_context(|| format!("replicate {i}"))?;
        rows.push((i, clt));
    }
    let norm = &rows[0].1.normalization;
    let mut out = String::new();
    writeln!(
        out,
        "# lrv ustat states={} n={} reps={} seed={} theta={} sigma1_sq={}",
        chain.n_states(),
        a.n,
        a.reps,
        a.seed,
        norm.theta,
        norm.sigma1_sq
    )?;
    writeln!(out, "replicate,statistic,linear_statistic")?;
    for (i, clt) in &rows {
        writeln!(out, "{},{},{}", i, clt.statistic, clt.linear_statistic)?;
    }
    emit(&a.out, &out)
}

// ---------------------------------------------------------------------------
// Poisson log-linear posterior setup
// ---------------------------------------------------------------------------

struct PoissonSetup {
    model: PoissonRegModel,
    theta_true: Vec<f64>,
    kappa: f64,
    coordinate: usize,
}

/// Generates a synthetic dataset and a usable sampler configuration.
/// Sub-seeds are derived from the master seed with fixed tags so the data,
/// the tuning run and the replicate chains never share a stream.
fn poisson_setup(p: &PoissonArgs, master_seed: u64) -> Result<PoissonSetup> {
    if p.gen_alphas.len() + 1 != p.groups {
        bail!(
            "--gen-alphas needs {} values for {} groups (the last effect is their negated sum), \
             got {}",
            p.groups - 1,
            p.groups,
            p.gen_alphas.len()
        );
    }
    let mut alpha = p.gen_alphas.clone();
    alpha.push(-alpha.iter().sum::<f64>());
    let truth = PoissonRegTruth {
        mu: p.gen_mu,
        alpha,
        var_eps: p.gen_var_eps,
        var_beta: p.gen_var_beta,
    };
    let mut data_rng = RngStream::new(derive_seed(master_seed, 2001), 0);
    let (model, theta_true) =
        generate_poisson_data(&truth, p.items, p.exposure, &mut data_rng)?;
    if p.coordinate >= model.dim() {
        bail!(
            "--coordinate {} is out of range for a {}-dimensional parameter vector",
            p.coordinate,
            model.dim()
        );
    }
    let kappa = match p.kappa {
        Some(k) => k,
        None => {
            let lp = {
                let model = model.clone();
                move |theta: &[f64]| model.log_posterior(theta).unwrap_or(f64::NEG_INFINITY)
            };
            let cfg = RwmConfig {
                kappa: 2.38 / (model.dim() as f64).sqrt(),
                proposal_cov: None,
                init: theta_true.clone(),
                steps: 0,
                burn_in: 0,
            };
            let mut tune_rng = RngStream::new(derive_seed(master_seed, 2002), 0);
            tune_kappa(&lp, &cfg, 0.23, 15, 200, &mut tune_rng)?
        }
    };
    Ok(PoissonSetup { model, theta_true, kappa, coordinate: p.coordinate })
}

/// Posterior mean of the monitored coordinate from one long preliminary run.
fn preliminary_truth(setup: &PoissonSetup, prelim_n: usize, master_seed: u64) -> Result<f64> {
    if prelim_n == 0 {
        bail!("--prelim-n must be positive when no --truth is supplied");
    }
    let model = setup.model.clone();
    let log_target =
        move |theta: &[f64]| model.log_posterior(theta).unwrap_or(f64::NEG_INFINITY);
    let cfg = RwmConfig {
        kappa: setup.kappa,
        proposal_cov: None,
        init: setup.theta_true.clone(),
        steps: prelim_n,
        burn_in: prelim_n / 5,
    };
    let mut rng = RngStream::new(derive_seed(master_seed, 2003), 0);
    let run = rwm_sample(log_target, &cfg, &mut rng)?;
    let sum: f64 = run.samples.iter().map(|theta| theta[setup.coordinate]).sum();
    Ok(sum / run.samples.len() as f64)
}

// ---------------------------------------------------------------------------
// Argument parsing and I/O helpers
// ---------------------------------------------------------------------------

/// Bandwidth rule as given on the command line.
#[derive(Debug, Clone, Copy)]
enum CnRule {
    Delta(f64),
    FixedB,
}

impl CnRule {
    fn bandwidth_rule(self, b: f64) -> Result<BandwidthRule> {
        Ok(match self {
            CnRule::Delta(d) => BandwidthRule::classical(d)?,
            CnRule::FixedB => BandwidthRule::fixed_b(b)?,
        })
    }
}

impl std::fmt::Display for CnRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CnRule::Delta(d) => write!(f, "delta:{d}"),
            CnRule::FixedB => write!(f, "fixedb"),
        }
    }
}

fn parse_cn_rule(s: &str) -> Result<CnRule, String> {
    if s.eq_ignore_ascii_case("fixedb") {
        return Ok(CnRule::FixedB);
    }
    if let Some(d) = s.strip_prefix("delta:") {
        let value: f64 = d.parse().map_err(|e| format!("bad exponent in {s:?}: {e}"))?;
        return Ok(CnRule::Delta(value));
    }
    Err(format!("expected 'delta:<exponent>' or 'fixedb', got {s:?}"))
}

fn parse_window(s: &str) -> Result<WindowKind, String> {
    s.parse::<WindowKind>().map_err(|e| e.to_string())
}

fn garch_params(omega: f64, alpha: f64, beta: f64) -> Result<GarchParams> {
    // Stationary start: h0 at the mean-square level so no burn-in is needed
    // for the volatility recursion itself.
    let h0 = GarchParams::new(omega, alpha, beta, 1.0)?.mean_square()?;
    Ok(GarchParams::new(omega, alpha, beta, h0)?)
}

fn need_seed(seed: Option<u64>, check: &str) -> Result<u64> {
    seed.ok_or_else(|| anyhow!("--seed is required for --check {check} (it simulates a path)"))
}

/// Splices `key=value` lines from `--config <file>` into the argument list
/// as `--key value` pairs, skipping keys already present; the `--config`
/// tokens themselves are removed before clap sees the arguments.
fn expand_args(mut args: Vec<String>) -> Result<Vec<String>> {
    let mut config_path: Option<String> = None;
    let mut i = 0;
    while i < args.len() {
        if args[i] == "--config" {
            if i + 1 >= args.len() {
                bail!("--config needs a file path");
            }
            config_path = Some(args.remove(i + 1));
            args.remove(i);
        } else if let Some(p) = args[i].strip_prefix("--config=") {
            config_path = Some(p.to_string());
            args.remove(i);
        } else {
            i += 1;
        }
    }
    let Some(path) = config_path else { return Ok(args) };
    let text = fs::read_to_string(&path).with_context(|| format!("reading config {path}"))?;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("{path}:{}: expected key=value, got {line:?}", lineno + 1))?;
        let flag = format!("--{}", key.trim());
        let given = args
            .iter()
            .any(|a| *a == flag || a.starts_with(&format!("{flag}=")));
        if !given {
            args.push(flag);
            let value = value.trim();
            if !value.is_empty() {
                args.push(value.to_string());
            }
        }
    }
    Ok(args)
}

/// Reads a series: one-column CSV (a leading `value` header is skipped) or
/// any whitespace/comma-separated stream; `-` reads stdin; `#` lines are
/// comments.
fn read_series(input: &Path) -> Result<Vec<f64>> {
    let text = if input == Path::new("-") {
        let mut buf = String::new();
        std::io::stdin()
            .read_to_string(&mut buf)
            .context("reading series from stdin")?;
        buf
    } else {
        fs::read_to_string(input).with_context(|| format!("reading series {}", input.display()))?
    };
    let mut values = Vec::new();
    let mut first_content = true;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if first_content {
            first_content = false;
            if line.eq_ignore_ascii_case("value") {
                continue;
            }
        }
        for token in line.split(|c: char| c == ',' || c.is_whitespace()) {
            if token.is_empty() {
                continue;
            }
            let v: f64 = token
                .parse()
                .with_context(|| format!("line {}: bad number {token:?}", lineno + 1))?;
            values.push(v);
        }
    }
    Ok(values)
}

/// Reads a numeric matrix: one CSV row per line, `#` lines are comments.
fn read_matrix(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading matrix {}", path.display()))?;
    let mut rows = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row: Vec<f64> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<f64>()
                    .with_context(|| format!("line {}: bad number {t:?}", lineno + 1))
            })
            .collect::<Result<_>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        bail!("matrix {} has no rows", path.display());
    }
    Ok(rows)
}

/// The chain under study: a transition matrix file, or the worked two-state
/// example when no file is given.
fn load_chain(path: Option<&Path>) -> Result<FiniteChain> {
    Ok(match path {
        Some(p) => FiniteChain::from_rows(read_matrix(p)?)?,
        None => FiniteChain::two_state(0.1, 0.2)?,
    })
}

/// Kernel matrix file, or the additive kernel `f(x) + f(y)` when absent.
fn load_kernel(path: Option<&Path>, f: &[f64]) -> Result<UStatKernel> {
    Ok(match path {
        Some(p) => UStatKernel::from_rows(read_matrix(p)?)?,
        None => UStatKernel::additive(f),
    })
}

/// Explicit per-state values, or the state indices `0, 1, …` as floats.
fn state_function(f: Option<Vec<f64>>, n_states: usize) -> Result<Vec<f64>> {
    match f {
        Some(values) => {
            if values.len() != n_states {
                bail!("--f needs one value per state ({n_states}), got {}", values.len());
            }
            Ok(values)
        }
        None => Ok((0..n_states).map(|i| i as f64).collect()),
    }
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";")
}

fn emit(out: &Option<PathBuf>, content: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, content)
            .with_context(|| format!("writing output {}", path.display())),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}
