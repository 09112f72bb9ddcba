//! Monte Carlo ensembles over index paths, an exact enumeration oracle for
//! small instances, and checks of ensemble traces against a-priori bounds.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{check_len, Error, Result};
use crate::iteration::{run_path, IndexStream, Iteration};
use crate::linops::{Grid, OperatorBundle, RowOperator};
use crate::problems::ProblemInstance;
use crate::shb::{HilbertSolver, RateConstants, StepPolicy};

/// Largest number of index paths [`enumerate_expectation`] will visit.
pub const ENUMERATION_GUARD: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    L2,
    L1,
}

impl Norm {
    /// `||x||^2` in this norm on `grid`.
    pub fn norm_sq(self, grid: &Grid, x: &[f64]) -> f64 {
        match self {
            Norm::L2 => grid.norm_sq(x),
            Norm::L1 => {
                let n = grid.l1_norm(x);
                n * n
            }
        }
    }

    fn dist_sq(self, grid: &Grid, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Norm::L2 => grid.dist_sq(x, y),
            Norm::L1 => {
                let n: f64 = grid
                    .weights()
                    .iter()
                    .zip(x)
                    .zip(y)
                    .map(|((w, a), b)| w * (a - b).abs())
                    .sum();
                n * n
            }
        }
    }
}

/// Squared relative error `||x - truth||^2 / ||truth||^2`.
pub fn rel_err_sq(x: &[f64], truth: &[f64], grid: &Grid, norm: Norm) -> Result<f64> {
    check_len(grid.len(), x.len())?;
    check_len(grid.len(), truth.len())?;
    let denom = norm.norm_sq(grid, truth);
    if !(denom > 0.0) {
        return Err(Error::Config("reference solution has zero norm".into()));
    }
    Ok(norm.dist_sq(grid, x, truth) / denom)
}

/// Which iterations an ensemble records: all up to `dense_until`, then every
/// `every`-th, plus the final one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stride {
    pub dense_until: usize,
    pub every: usize,
}

impl Default for Stride {
    fn default() -> Self {
        Self {
            dense_until: 1000,
            every: 10,
        }
    }
}

impl Stride {
    pub fn dense() -> Self {
        Self {
            dense_until: usize::MAX,
            every: 1,
        }
    }

    pub fn records(&self, n: usize, last: usize) -> bool {
        n <= self.dense_until || n.is_multiple_of(self.every.max(1)) || n == last
    }

    pub fn iters(&self, last: usize) -> Vec<usize> {
        (0..=last).filter(|&n| self.records(n, last)).collect()
    }
}

/// A scalar quantity traced along a single index path.
pub trait Experiment: Sync {
    fn rows(&self) -> usize;

    /// Metric values at every `n` (0 through `path.len()`) for which `record(n)` holds.
    fn trace(&self, path: &[usize], record: &dyn Fn(usize) -> bool) -> Result<Vec<f64>>;

    /// Factor converting the metric to absolute units (`||truth||^2`).
    fn scale(&self) -> f64;
}

/// Squared relative error of a solver's iterates against a reference solution.
pub struct ErrorTrace<'a, M> {
    method: M,
    grid: &'a Grid,
    truth: &'a [f64],
    norm: Norm,
    truth_norm_sq: f64,
}

impl<'a, M: Iteration> ErrorTrace<'a, M> {
    pub fn new(method: M, grid: &'a Grid, truth: &'a [f64], norm: Norm) -> Result<Self> {
        check_len(grid.len(), truth.len())?;
        let truth_norm_sq = norm.norm_sq(grid, truth);
        if !(truth_norm_sq > 0.0) {
            return Err(Error::Config("reference solution has zero norm".into()));
        }
        Ok(Self {
            method,
            grid,
            truth,
            norm,
            truth_norm_sq,
        })
    }

    pub fn method(&self) -> &M {
        &self.method
    }
}

impl<M: Iteration> Experiment for ErrorTrace<'_, M> {
    fn rows(&self) -> usize {
        self.method.rows()
    }

    fn trace(&self, path: &[usize], record: &dyn Fn(usize) -> bool) -> Result<Vec<f64>> {
        run_path(&self.method, path, |n, x| {
            record(n).then(|| self.norm.dist_sq(self.grid, x, self.truth) / self.truth_norm_sq)
        })
    }

    fn scale(&self) -> f64 {
        self.truth_norm_sq
    }
}

/// `||x_n^delta - x_n||^2 / ||truth||^2` between a noisy-data and an exact-data run on one path.
pub struct StabilityTrace<'a> {
    noisy: HilbertSolver<'a>,
    exact: HilbertSolver<'a>,
    grid: &'a Grid,
    truth_norm_sq: f64,
}

impl<'a> StabilityTrace<'a> {
    pub fn new(noisy: HilbertSolver<'a>, exact: HilbertSolver<'a>, truth: &[f64]) -> Result<Self> {
        if noisy.rows() != exact.rows() {
            return Err(Error::Dimension {
                expected: noisy.rows(),
                found: exact.rows(),
            });
        }
        let grid: &'a Grid = noisy.bundle().grid();
        let truth_norm_sq = grid.norm_sq(truth);
        if !(truth_norm_sq > 0.0) {
            return Err(Error::Config("reference solution has zero norm".into()));
        }
        Ok(Self {
            noisy,
            exact,
            grid,
            truth_norm_sq,
        })
    }
}

impl Experiment for StabilityTrace<'_> {
    fn rows(&self) -> usize {
        self.noisy.rows()
    }

    fn trace(&self, path: &[usize], record: &dyn Fn(usize) -> bool) -> Result<Vec<f64>> {
        let mut a = self.noisy.start();
        let mut b = self.exact.start();
        let mut out = Vec::new();
        let mut push = |n: usize, a: &[f64], b: &[f64]| {
            if record(n) {
                out.push(self.grid.dist_sq(a, b) / self.truth_norm_sq);
            }
        };
        push(0, self.noisy.iterate(&a), self.exact.iterate(&b));
        for (k, &i) in path.iter().enumerate() {
            self.noisy.advance(&mut a, i)?;
            self.exact.advance(&mut b, i)?;
            push(k + 1, self.noisy.iterate(&a), self.exact.iterate(&b));
        }
        Ok(out)
    }

    fn scale(&self) -> f64 {
        self.truth_norm_sq
    }
}

/// Pointwise Monte Carlo mean of a traced metric, with standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    pub iters: Vec<usize>,
    pub mean_sq_rel_err: Vec<f64>,
    pub std_err: Vec<f64>,
    pub n_runs: usize,
    pub base_seed: u64,
    /// `||truth||^2` in the metric's norm; multiplies the trace into absolute units.
    pub truth_norm_sq: f64,
}

impl EnsembleResult {
    pub fn len(&self) -> usize {
        self.iters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iters.is_empty()
    }

    /// The same trace in absolute units `E||x_n - x^dagger||^2`.
    pub fn absolute(&self) -> Self {
        let s = self.truth_norm_sq;
        Self {
            mean_sq_rel_err: self.mean_sq_rel_err.iter().map(|v| v * s).collect(),
            std_err: self.std_err.iter().map(|v| v * s).collect(),
            truth_norm_sq: 1.0,
            ..self.clone()
        }
    }

    /// Value recorded at iteration `n`, if any.
    pub fn at(&self, n: usize) -> Option<f64> {
        self.iters
            .binary_search(&n)
            .ok()
            .map(|k| self.mean_sq_rel_err[k])
    }

    /// CSV with header `iter,mean_sq_rel_err,std_err`, `%.12e` numbers and LF endings.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,mean_sq_rel_err,std_err\n");
        for ((n, m), s) in self.iters.iter().zip(&self.mean_sq_rel_err).zip(&self.std_err) {
            let _ = writeln!(out, "{n},{},{}", format_sci(*m), format_sci(*s));
        }
        out
    }
}

/// C-style `%.12e`: the exponent carries a sign and at least two digits.
pub fn format_sci(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    let s = format!("{v:.12e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent present");
    let (sign, digits) = match exp.strip_prefix('-') {
        Some(d) => ('-', d),
        None => ('+', exp),
    };
    format!("{mantissa}e{sign}{digits:0>2}")
}

/// Runs `n_runs` independent paths of `n_iters` steps; run `r` draws from stream `(base_seed, r)`.
pub fn monte_carlo<E: Experiment + ?Sized>(
    experiment: &E,
    n_iters: usize,
    stride: Stride,
    n_runs: usize,
    base_seed: u64,
) -> Result<EnsembleResult> {
    if n_runs == 0 {
        return Err(Error::Config("an ensemble needs at least one run".into()));
    }
    let rows = experiment.rows();
    let record = move |n: usize| stride.records(n, n_iters);
    let traces: Vec<Vec<f64>> = (0..n_runs as u64)
        .into_par_iter()
        .map(|r| {
            let path = IndexStream::new(base_seed, r, rows).path(n_iters);
            experiment
                .trace(&path, &record)
                .map_err(|e| Error::RunFailed {
                    run: r,
                    base_seed,
                    source: Box::new(e),
                })
        })
        .collect::<Result<_>>()?;
    let iters = stride.iters(n_iters);
    let (mean, std_err) = pointwise_moments(&traces, iters.len());
    Ok(EnsembleResult {
        iters,
        mean_sq_rel_err: mean,
        std_err,
        n_runs,
        base_seed,
        truth_norm_sq: experiment.scale(),
    })
}

/// Mean and standard error of the mean at every recorded position, reduced in run order.
///
/// Sums are taken relative to the first run, so identical traces give that
/// trace back exactly with zero spread.
fn pointwise_moments(traces: &[Vec<f64>], len: usize) -> (Vec<f64>, Vec<f64>) {
    let n = traces.len() as f64;
    let pivot = &traces[0];
    let mut shift = vec![0.0; len];
    for t in traces {
        for ((s, v), c) in shift.iter_mut().zip(t).zip(pivot) {
            *s += v - c;
        }
    }
    shift.iter_mut().for_each(|s| *s /= n);
    let mean: Vec<f64> = pivot.iter().zip(&shift).map(|(c, s)| c + s).collect();
    let mut std_err = vec![0.0; len];
    if traces.len() > 1 {
        for t in traces {
            for (((e, v), c), s) in std_err.iter_mut().zip(t).zip(pivot).zip(&shift) {
                let d = (v - c) - s;
                *e += d * d;
            }
        }
        std_err
            .iter_mut()
            .for_each(|s| *s = (*s / (n - 1.0)).sqrt() / n.sqrt());
    }
    (mean, std_err)
}

/// Exact expectation of the traced metric at `n = 0..=n_steps`, by visiting every equally likely index path.
pub fn enumerate_expectation<E: Experiment + ?Sized>(experiment: &E, n_steps: usize) -> Result<Vec<f64>> {
    let p = experiment.rows();
    let paths = (p as u64)
        .checked_pow(n_steps as u32)
        .filter(|&c| c <= ENUMERATION_GUARD)
        .ok_or_else(|| {
            Error::Resource(format!(
                "{p}^{n_steps} index paths exceed the enumeration limit of {ENUMERATION_GUARD}"
            ))
        })?;
    let mut path = vec![0usize; n_steps];
    let mut sum = vec![0.0; n_steps + 1];
    let all = |_: usize| true;
    for _ in 0..paths {
        let trace = experiment.trace(&path, &all)?;
        for (s, v) in sum.iter_mut().zip(&trace) {
            *s += v;
        }
        // odometer increment
        for digit in path.iter_mut().rev() {
            *digit += 1;
            if *digit < p {
                break;
            }
            *digit = 0;
        }
    }
    Ok(sum.into_iter().map(|s| s / paths as f64).collect())
}

/// An instance whose solution satisfies `x^dagger - x0 = A^* lambda^dagger`, with `M0` known exactly.
#[derive(Debug, Clone)]
pub struct SourceConditionInstance {
    pub problem: ProblemInstance,
    pub lambda_dagger: Vec<f64>,
    pub x0: Vec<f64>,
    pub constants: RateConstants,
}

impl SourceConditionInstance {
    pub fn m0(&self) -> f64 {
        self.constants.m0
    }
}

/// Builds `x^dagger = x0 + A^* lambda^dagger`, synthesizes exact data, and
/// evaluates `M0 = ||x0 - x^dagger||^2 + c0 sum_i lambda_i^2 / eta_i` for `policy`.
pub fn source_condition_construct(
    name: &str,
    bundle: OperatorBundle,
    sample_points: Vec<f64>,
    lambda_dagger: Vec<f64>,
    x0: Vec<f64>,
    policy: &StepPolicy,
) -> Result<SourceConditionInstance> {
    check_len(bundle.len(), lambda_dagger.len())?;
    check_len(bundle.grid().len(), x0.len())?;
    let shift = bundle.adjoint_apply(&lambda_dagger)?;
    let truth: Vec<f64> = x0.iter().zip(&shift).map(|(a, b)| a + b).collect();
    let etas = policy.nominal_etas(&bundle)?;
    let provisional = RateConstants::from_policy(&bundle, policy, 0.0)?;
    let dual_part: f64 = lambda_dagger.iter().zip(&etas).map(|(l, e)| l * l / e).sum();
    let m0 = bundle.grid().norm_sq(&shift) + provisional.c0 * dual_part;
    let constants = RateConstants::new(provisional.c0, provisional.eta_bar, m0)?;
    let problem = ProblemInstance::new(name, bundle, sample_points, truth)?;
    Ok(SourceConditionInstance {
        problem,
        lambda_dagger,
        x0,
        constants,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemiConvergence {
    /// Iteration index at which the mean error is smallest (first on ties).
    pub n_min: usize,
    pub err_min: f64,
    pub err_final: f64,
}

pub fn semi_convergence_stats(trace: &EnsembleResult) -> Result<SemiConvergence> {
    let (k, &err_min) = trace
        .mean_sq_rel_err
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, &f64)>, (k, v)| match best {
            Some((_, b)) if *v >= *b => best,
            _ => Some((k, v)),
        })
        .ok_or_else(|| Error::Config("empty trace".into()))?;
    Ok(SemiConvergence {
        n_min: trace.iters[k],
        err_min,
        err_final: *trace.mean_sq_rel_err.last().expect("non-empty"),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub iter: usize,
    pub observed: f64,
    pub allowed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub passed: bool,
    pub checked: usize,
    pub violations: Vec<Violation>,
}

/// Passes iff `mean[k] <= bound(iters[k]) (1 + slack) + 3 std_err[k]` at every recorded iterate.
pub fn bound_check(trace: &EnsembleResult, bound_fn: impl Fn(usize) -> f64, slack: f64) -> BoundReport {
    let violations: Vec<Violation> = trace
        .iters
        .iter()
        .zip(&trace.mean_sq_rel_err)
        .zip(&trace.std_err)
        .filter_map(|((&n, &observed), &se)| {
            let allowed = bound_fn(n) * (1.0 + slack) + 3.0 * se;
            (observed > allowed).then_some(Violation {
                iter: n,
                observed,
                allowed,
            })
        })
        .collect();
    BoundReport {
        passed: violations.is_empty(),
        checked: trace.len(),
        violations,
    }
}

/// Rows with i.i.d. uniform `[-1, 1]` entries on a trapezoidal grid over `[0, 1]`.
pub fn random_bundle(p: usize, m: usize, seed: u64) -> Result<OperatorBundle> {
    let grid = Arc::new(Grid::trapezoid(0.0, 1.0, m)?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..p)
        .map(|_| {
            let k = (0..m).map(|_| rng.random_range(-1.0..=1.0)).collect();
            RowOperator::new(grid.clone(), k)
        })
        .collect::<Result<Vec<_>>>()?;
    OperatorBundle::new(grid, rows)
}

/// A random instance with uniform random truth in `[-1, 1]`.
pub fn random_instance(p: usize, m: usize, seed: u64) -> Result<ProblemInstance> {
    let bundle = random_bundle(p, m, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let truth = (0..m).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let points = (0..p).map(|i| i as f64).collect();
    ProblemInstance::new("random", bundle, points, truth)
}

/// Gaussian-kernel rows `exp(-(s - t)^2 / (2 width^2))` on `[0, 1]`; severely ill-conditioned.
pub fn smoothing_bundle(p: usize, m: usize, width: f64) -> Result<(OperatorBundle, Vec<f64>)> {
    if p < 2 {
        return Err(Error::Config("smoothing bundle needs p >= 2".into()));
    }
    let grid = Arc::new(Grid::trapezoid(0.0, 1.0, m)?);
    let points = crate::problems::sample_points(0.0, 1.0, p);
    let c = 1.0 / (2.0 * width * width);
    let bundle = OperatorBundle::from_kernel(grid, &points, |s, t| (-(s - t) * (s - t) * c).exp())?;
    Ok((bundle, points))
}

/// Standard normal draws, for source-condition multipliers.
pub fn gaussian_vector(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|_| {
            // Box-Muller
            let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.random();
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        })
        .collect()
}
