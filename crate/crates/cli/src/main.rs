//! `shb`: reproduces the integral-equation experiments and runs the bound checks.

mod plot;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use shbreg::experiments::{
    delta_rate_ratios, entropy_ensemble, hilbert_ensemble, oracle_check, rate_check, stability_check,
    CheckReport, EnsembleSpec, OracleConfig, PolicyKind, RateConfig, StabilityConfig,
};
use shbreg::harness::{semi_convergence_stats, EnsembleResult, Stride};
use shbreg::problems::{add_noise, build_example1, build_example2, ProblemInstance};
use shbreg::shb::{StepPolicy, Variant};

use crate::plot::Series;

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] shbreg::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(name = "shb", version, about = "Stochastic heavy-ball regularization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Semi-convergence of the Hilbert-space method on the cosine-kernel problem.
    Example1(Opts),
    /// Entropy-regularized dual method on the Gaussian-kernel density problem.
    Example2(Opts),
    /// Source-condition rate bound and the O(delta) a-priori stopping check.
    RateCheck(Opts),
    /// Noisy-vs-exact stability bound.
    StabilityCheck(Opts),
    /// Monte Carlo against exact enumeration of all index paths.
    OracleCheck(Opts),
    /// Heavy ball vs plain stochastic gradient on the cosine-kernel problem.
    CompareSgd(Opts),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum PolicyArg {
    Const,
    Dp,
}

#[derive(Args, Debug, Clone)]
struct Opts {
    /// Number of equations.
    #[arg(long)]
    p: Option<usize>,
    /// Number of quadrature nodes.
    #[arg(long)]
    m: Option<usize>,
    /// Independent runs per ensemble.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    runs: Option<u64>,
    /// Iteration budget.
    #[arg(long)]
    iters: Option<usize>,
    /// `dp` also runs the discrepancy-switched steps next to the constant ones.
    #[arg(long, value_enum, default_value_t = PolicyArg::Const)]
    policy: PolicyArg,
    #[arg(long)]
    mu0: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Relative noise levels, comma separated.
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<f64>>,
    /// Output directory for CSV and SVG files.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Scales the source-condition multiplier (rate-check); 0 makes the start exact.
    #[arg(long, default_value_t = 1.0)]
    lambda_scale: f64,
    /// Multiplies the proven constant (stability-check).
    #[arg(long, default_value_t = 1.0)]
    bound_factor: f64,
}

impl Opts {
    fn runs_or(&self, default: usize) -> usize {
        self.runs.map_or(default, |r| r as usize)
    }

    fn levels_or(&self, default: &[f64]) -> Result<Vec<f64>> {
        let levels = self.levels.clone().unwrap_or_else(|| default.to_vec());
        if levels.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(CliError::Usage(format!("noise levels must be finite and nonnegative: {levels:?}")));
        }
        Ok(levels)
    }

    fn spec(&self, runs: usize, iters: usize) -> EnsembleSpec {
        EnsembleSpec {
            runs: self.runs_or(runs),
            iters: self.iters.unwrap_or(iters),
            seed: self.seed,
            stride: Stride::default(),
        }
    }
}

fn level_tag(level: f64) -> String {
    format!("{level:e}")
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

struct Labelled {
    label: String,
    file: String,
    result: EnsembleResult,
}

fn emit(opts: &Opts, title: &str, svg_name: &str, y_label: &str, runs: &[Labelled]) -> Result<()> {
    for r in runs {
        let path = opts.out.join(&r.file);
        write_file(&path, &r.result.to_csv())?;
        let s = semi_convergence_stats(&r.result)?;
        println!(
            "{} {} n_min={} err_min={:.6e} err_final={:.6e}",
            path.display(),
            r.label,
            s.n_min,
            s.err_min,
            s.err_final
        );
    }
    let series: Vec<Series<'_>> = runs
        .iter()
        .map(|r| Series {
            label: r.label.clone(),
            iters: &r.result.iters,
            values: &r.result.mean_sq_rel_err,
        })
        .collect();
    let path = opts.out.join(svg_name);
    write_file(&path, &plot::render(title, y_label, &series))?;
    println!("{}", path.display());
    Ok(())
}

fn example1_problem(opts: &Opts) -> Result<ProblemInstance> {
    Ok(build_example1(opts.p.unwrap_or(200), opts.m.unwrap_or(1000))?)
}

fn cmd_example1(opts: &Opts) -> Result<()> {
    let problem = example1_problem(opts)?;
    let spec = opts.spec(100, 20_000);
    let (mu0, tau) = (opts.mu0.unwrap_or(0.6), opts.tau.unwrap_or(1.4));
    StepPolicy::discrepancy(mu0, tau, Vec::new())?;
    let mut kinds = vec![PolicyKind::Constant];
    if opts.policy == PolicyArg::Dp {
        kinds.push(PolicyKind::Discrepancy);
    }
    let levels = opts.levels_or(&[1e-1, 1e-2, 1e-3])?;
    prepare_out(&opts.out)?;
    let mut runs = Vec::new();
    for level in levels {
        let data = add_noise(&problem, level, opts.seed)?;
        for &kind in &kinds {
            let result = hilbert_ensemble(&problem, &data, kind, Variant::Shb, mu0, tau, &spec)?;
            runs.push(Labelled {
                label: format!("rel={} {}", level_tag(level), kind.label()),
                file: format!("ex1_{}_{}.csv", level_tag(level), kind.label()),
                result,
            });
        }
    }
    emit(opts, "heavy ball, mean squared relative L2 error", "ex1.svg", "relative error", &runs)
}

fn cmd_example2(opts: &Opts) -> Result<()> {
    let p = opts.p.unwrap_or(400);
    if opts.m.is_some_and(|m| m != p) {
        return Err(CliError::Usage("example2 uses the sample points as nodes, so --m must equal --p".into()));
    }
    let problem = build_example2(p)?;
    let spec = opts.spec(1, 200_000);
    let (mu0, tau) = (opts.mu0.unwrap_or(0.98), opts.tau.unwrap_or(1.0));
    StepPolicy::full_norm_discrepancy(mu0, 0.5, tau, Vec::new())?;
    let mut kinds = vec![(PolicyKind::Constant, "entropy")];
    if opts.policy == PolicyArg::Dp {
        kinds.push((PolicyKind::Discrepancy, "entropy-DP"));
    }
    let levels = opts.levels_or(&[0.5, 0.1, 0.01])?;
    prepare_out(&opts.out)?;
    let mut runs = Vec::new();
    for level in levels {
        let data = add_noise(&problem, level, opts.seed)?;
        for &(kind, name) in &kinds {
            let result = entropy_ensemble(&problem, &data, kind, mu0, tau, &spec)?;
            runs.push(Labelled {
                label: format!("rel={} {name}", level_tag(level)),
                file: format!("ex2_{}_{}.csv", level_tag(level), kind.label()),
                result,
            });
        }
    }
    emit(opts, "entropy dual method, squared relative L1 error", "ex2.svg", "relative error", &runs)
}

fn cmd_compare_sgd(opts: &Opts) -> Result<()> {
    let problem = example1_problem(opts)?;
    let spec = opts.spec(100, 20_000);
    let mu0 = opts.mu0.unwrap_or(0.6);
    let tau = opts.tau.unwrap_or(1.4);
    StepPolicy::discrepancy(mu0, tau, Vec::new())?;
    let kind = match opts.policy {
        PolicyArg::Const => PolicyKind::Constant,
        PolicyArg::Dp => PolicyKind::Discrepancy,
    };
    let levels = opts.levels_or(&[1e-2])?;
    prepare_out(&opts.out)?;
    let mut runs = Vec::new();
    for level in levels {
        let data = add_noise(&problem, level, opts.seed)?;
        let mut mins = Vec::new();
        for (variant, name) in [(Variant::Shb, "shb"), (Variant::Sgd, "sgd")] {
            let result = hilbert_ensemble(&problem, &data, kind, variant, mu0, tau, &spec)?;
            mins.push(semi_convergence_stats(&result)?.err_min);
            runs.push(Labelled {
                label: format!("rel={} {name}", level_tag(level)),
                file: format!("sgd_{}_{name}_{}.csv", level_tag(level), kind.label()),
                result,
            });
        }
        println!(
            "level={} shb_min={:.6e} sgd_min={:.6e} ratio={:.4}",
            level_tag(level),
            mins[0],
            mins[1],
            mins[0] / mins[1]
        );
    }
    emit(opts, "heavy ball vs stochastic gradient", "compare_sgd.svg", "relative error", &runs)
}

fn cmd_stability(opts: &Opts) -> Result<Vec<CheckReport>> {
    let d = StabilityConfig::default();
    let cfg = StabilityConfig {
        p: opts.p.unwrap_or(d.p),
        m: opts.m.unwrap_or(d.m),
        mu0: opts.mu0.unwrap_or(d.mu0),
        rel_level: opts.levels.as_ref().and_then(|l| l.first().copied()).unwrap_or(d.rel_level),
        runs: opts.runs_or(d.runs),
        iters: opts.iters.unwrap_or(d.iters),
        seed: opts.seed,
        bound_factor: opts.bound_factor,
    };
    Ok(vec![stability_check(&cfg)?])
}

fn cmd_rate(opts: &Opts) -> Result<Vec<CheckReport>> {
    let d = RateConfig::default();
    let cfg = RateConfig {
        p: opts.p.unwrap_or(d.p),
        m: opts.m.unwrap_or(d.m),
        mu0: opts.mu0.unwrap_or(d.mu0),
        runs: opts.runs_or(d.runs),
        iters: opts.iters.unwrap_or(d.iters),
        seed: opts.seed,
        lambda_scale: opts.lambda_scale,
        ..d
    };
    let mut reports = vec![rate_check(&cfg)?];
    if opts.lambda_scale != 0.0 {
        let delta_cfg = RateConfig {
            runs: opts.runs_or(50),
            ..cfg
        };
        let ratios = delta_rate_ratios(&delta_cfg, &opts.levels_or(&[1e-1, 1e-2, 1e-3])?)?;
        let vals: Vec<f64> = ratios.iter().map(|r| r.2).collect();
        let hi = vals.iter().cloned().fold(0.0, f64::max);
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let spread = hi / lo;
        let listed: Vec<String> = ratios
            .iter()
            .map(|(d, n, v)| format!("delta={d:e}:n={n}:ratio={v:.4e}"))
            .collect();
        reports.push(CheckReport {
            name: "delta-rate",
            passed: spread <= 10.0,
            detail: format!("{} spread={spread:.4}", listed.join(" ")),
        });
    }
    Ok(reports)
}

fn cmd_oracle(opts: &Opts) -> Result<Vec<CheckReport>> {
    let d = OracleConfig::default();
    let cfg = OracleConfig {
        p: opts.p.unwrap_or(d.p),
        m: opts.m.unwrap_or(d.m),
        n_steps: opts.iters.unwrap_or(d.n_steps),
        runs: opts.runs_or(d.runs),
        mu0: opts.mu0.unwrap_or(d.mu0),
        rel_level: opts.levels.as_ref().and_then(|l| l.first().copied()).unwrap_or(d.rel_level),
        seed: opts.seed,
    };
    Ok(vec![oracle_check(&cfg)?])
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("SHB_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("SHB_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot size worker pool: {e}")))
}

fn verify(reports: Result<Vec<CheckReport>>) -> Result<bool> {
    let reports = reports?;
    for r in &reports {
        println!("{r}");
    }
    Ok(reports.iter().all(|r| r.passed))
}

fn run(cli: Cli) -> Result<bool> {
    configure_threads()?;
    match &cli.command {
        Command::Example1(o) => cmd_example1(o).map(|_| true),
        Command::Example2(o) => cmd_example2(o).map(|_| true),
        Command::CompareSgd(o) => cmd_compare_sgd(o).map(|_| true),
        Command::RateCheck(o) => verify(cmd_rate(o)),
        Command::StabilityCheck(o) => verify(cmd_stability(o)),
        Command::OracleCheck(o) => verify(cmd_oracle(o)),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
