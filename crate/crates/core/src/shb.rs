//! Stochastic heavy-ball iteration in Hilbert space, its SGD special case,
//! step-size policies and the a-priori error bounds.
//!
//! With momentum coefficients `alpha_n = 1/(n+2)`, `beta_n = n/(n+2)` the
//! two-step recursion
//!
//! ```text
//! x_{n+1} = x_n - alpha_n eta_i A_i^*(A_i x_n - y_i) + beta_n (x_n - x_{n-1})
//! ```
//!
//! is equivalent to the iterate-moving-average form
//!
//! ```text
//! z_{n+1} = z_n - eta_i A_i^*(A_i x_n - y_i)
//! x_{n+1} = (n+1)/(n+2) x_n + 1/(n+2) z_{n+1}
//! ```
//!
//! and [`SolverState`] keeps both representations in sync.

use crate::error::{check_len, Error, Result};
use crate::iteration::Iteration;
use crate::linops::{OperatorBundle, RowOperator};

/// Momentum coefficients `(alpha_n, beta_n) = (1/(n+2), n/(n+2))`.
pub fn step_coefficients(n: usize) -> (f64, f64) {
    let d = (n + 2) as f64;
    (1.0 / d, n as f64 / d)
}

/// Heavy-ball iterate pair plus the moving-average auxiliary `z`.
///
/// Invariant: `z = x_cur + n (x_cur - x_prev)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub x_cur: Vec<f64>,
    pub x_prev: Vec<f64>,
    pub z: Vec<f64>,
    pub n: usize,
}

impl SolverState {
    pub fn new(x0: Vec<f64>) -> Self {
        Self {
            x_prev: x0.clone(),
            z: x0.clone(),
            x_cur: x0,
            n: 0,
        }
    }
}

fn residual(state: &SolverState, row: &RowOperator, y_i: f64) -> Result<f64> {
    check_len(row.len(), state.x_cur.len())?;
    Ok(row.apply_unchecked(&state.x_cur) - y_i)
}

/// Two-step update with explicit coefficients; `z` is rebuilt from the new pair.
fn two_step_update(state: &mut SolverState, row: &RowOperator, residual: f64, eta: f64, alpha: f64, beta: f64) {
    let scale = alpha * eta * residual;
    let k = row.kernel_row();
    let n_next = (state.n + 1) as f64;
    for j in 0..k.len() {
        let cur = state.x_cur[j];
        let next = cur - scale * k[j] + beta * (cur - state.x_prev[j]);
        state.x_prev[j] = cur;
        state.x_cur[j] = next;
        state.z[j] = next + n_next * (next - cur);
    }
    state.n += 1;
}

fn ima_update(state: &mut SolverState, row: &RowOperator, residual: f64, eta: f64) {
    let scale = eta * residual;
    let k = row.kernel_row();
    let d = (state.n + 2) as f64;
    let keep = (state.n + 1) as f64 / d;
    for j in 0..k.len() {
        state.z[j] -= scale * k[j];
        let cur = state.x_cur[j];
        state.x_prev[j] = cur;
        state.x_cur[j] = keep * cur + state.z[j] / d;
    }
    state.n += 1;
}

fn sgd_update(state: &mut SolverState, row: &RowOperator, residual: f64, eta: f64) {
    let scale = eta * residual;
    let k = row.kernel_row();
    let n_next = (state.n + 1) as f64;
    for j in 0..k.len() {
        let cur = state.x_cur[j];
        let next = cur - scale * k[j];
        state.x_prev[j] = cur;
        state.x_cur[j] = next;
        state.z[j] = next + n_next * (next - cur);
    }
    state.n += 1;
}

/// Heavy-ball step with caller-supplied coefficients. `(1, 0)` gives plain SGD.
pub fn heavy_ball_step(
    state: &mut SolverState,
    row: &RowOperator,
    y_i: f64,
    eta: f64,
    alpha: f64,
    beta: f64,
) -> Result<()> {
    let r = residual(state, row, y_i)?;
    two_step_update(state, row, r, eta, alpha, beta);
    Ok(())
}

/// One step of the two-step recursion with the standard coefficients.
pub fn shb_step_twostep(state: &mut SolverState, row: &RowOperator, y_i: f64, eta: f64) -> Result<()> {
    let (alpha, beta) = step_coefficients(state.n);
    heavy_ball_step(state, row, y_i, eta, alpha, beta)
}

/// One step of the moving-average form.
pub fn shb_step_ima(state: &mut SolverState, row: &RowOperator, y_i: f64, eta: f64) -> Result<()> {
    let r = residual(state, row, y_i)?;
    ima_update(state, row, r, eta);
    Ok(())
}

/// One stochastic gradient (randomized Kaczmarz-type) step.
pub fn sgd_step(state: &mut SolverState, row: &RowOperator, y_i: f64, eta: f64) -> Result<()> {
    let r = residual(state, row, y_i)?;
    sgd_update(state, row, r, eta);
    Ok(())
}

/// Whether a step size is switched off once the residual drops below the noise level.
#[derive(Debug, Clone, PartialEq)]
pub enum StepRule {
    Constant,
    /// `eta_i = 0` whenever `|A_i x - y_i| <= tau * levels[i]`.
    Discrepancy { tau: f64, levels: Vec<f64> },
}

/// Which operator norm the step size `mu0 / ||.||^2` is scaled by.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormScale {
    /// `||A_i||^2`, the Hilbert-space choice.
    PerRow,
    /// `||A||^2` of the whole bundle, required by the dual (Banach) method.
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepPolicy {
    pub mu0: f64,
    pub rule: StepRule,
    pub scale: NormScale,
}

impl StepPolicy {
    /// `eta_i = mu0 / ||A_i||^2` with `0 < mu0 < 1`.
    pub fn constant(mu0: f64) -> Result<Self> {
        check_mu0(mu0, 1.0)?;
        Ok(Self {
            mu0,
            rule: StepRule::Constant,
            scale: NormScale::PerRow,
        })
    }

    /// Per-row steps switched off by the discrepancy test.
    pub fn discrepancy(mu0: f64, tau: f64, levels: Vec<f64>) -> Result<Self> {
        check_mu0(mu0, 1.0)?;
        Ok(Self {
            mu0,
            rule: discrepancy_rule(tau, levels)?,
            scale: NormScale::PerRow,
        })
    }

    /// `eta = mu0 / ||A||^2` with `0 < mu0 < 2 mu` for a `mu`-strongly convex regularizer.
    pub fn full_norm_constant(mu0: f64, mu: f64) -> Result<Self> {
        check_mu0(mu0, 2.0 * mu)?;
        Ok(Self {
            mu0,
            rule: StepRule::Constant,
            scale: NormScale::Full,
        })
    }

    pub fn full_norm_discrepancy(mu0: f64, mu: f64, tau: f64, levels: Vec<f64>) -> Result<Self> {
        check_mu0(mu0, 2.0 * mu)?;
        Ok(Self {
            mu0,
            rule: discrepancy_rule(tau, levels)?,
            scale: NormScale::Full,
        })
    }

    fn norm_sq(&self, bundle: &OperatorBundle, row_index: usize) -> f64 {
        match self.scale {
            NormScale::PerRow => bundle.row(row_index).op_norm_sq(),
            NormScale::Full => bundle.full_norm_sq(),
        }
    }

    /// Step size for equation `row_index` given the current residual magnitude.
    pub fn step_size(&self, bundle: &OperatorBundle, row_index: usize, residual_abs: f64) -> Result<f64> {
        let norm_sq = self.norm_sq(bundle, row_index);
        if !(norm_sq > 0.0) {
            return Err(Error::DegenerateRow(row_index));
        }
        let active = match &self.rule {
            StepRule::Constant => true,
            StepRule::Discrepancy { tau, levels } => residual_abs > tau * levels[row_index],
        };
        Ok(if active { self.mu0 / norm_sq } else { 0.0 })
    }

    /// The nominal step sizes `mu0 / ||.||^2`, one per row, ignoring the discrepancy switch.
    pub fn nominal_etas(&self, bundle: &OperatorBundle) -> Result<Vec<f64>> {
        (0..bundle.len())
            .map(|i| {
                let norm_sq = self.norm_sq(bundle, i);
                if norm_sq > 0.0 {
                    Ok(self.mu0 / norm_sq)
                } else {
                    Err(Error::DegenerateRow(i))
                }
            })
            .collect()
    }

    pub(crate) fn validate_for(&self, bundle: &OperatorBundle) -> Result<()> {
        if let StepRule::Discrepancy { levels, .. } = &self.rule {
            check_len(bundle.len(), levels.len())?;
        }
        self.nominal_etas(bundle).map(|_| ())
    }
}

fn check_mu0(mu0: f64, upper: f64) -> Result<()> {
    if mu0 > 0.0 && mu0 < upper {
        Ok(())
    } else {
        Err(Error::Config(format!("step factor mu0 must lie in (0, {upper}), got {mu0}")))
    }
}

fn discrepancy_rule(tau: f64, levels: Vec<f64>) -> Result<StepRule> {
    if !(tau >= 1.0) {
        return Err(Error::Config(format!("discrepancy factor tau must be >= 1, got {tau}")));
    }
    if levels.iter().any(|d| !(*d >= 0.0)) {
        return Err(Error::Config("noise levels must be nonnegative".into()));
    }
    Ok(StepRule::Discrepancy { tau, levels })
}

/// Which recursion a [`HilbertSolver`] runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Heavy ball in moving-average form (the production path).
    Shb,
    /// Heavy ball in the literal two-step form.
    ShbTwoStep,
    /// Plain stochastic gradient, `alpha = 1`, `beta = 0`.
    Sgd,
}

/// The Hilbert-space method (or its SGD special case) bound to a problem, data and policy.
#[derive(Debug, Clone)]
pub struct HilbertSolver<'a> {
    bundle: &'a OperatorBundle,
    data: &'a [f64],
    policy: &'a StepPolicy,
    variant: Variant,
    x0: Vec<f64>,
}

impl<'a> HilbertSolver<'a> {
    pub fn new(
        bundle: &'a OperatorBundle,
        data: &'a [f64],
        policy: &'a StepPolicy,
        variant: Variant,
        x0: Vec<f64>,
    ) -> Result<Self> {
        check_len(bundle.len(), data.len())?;
        check_len(bundle.grid().len(), x0.len())?;
        policy.validate_for(bundle)?;
        Ok(Self {
            bundle,
            data,
            policy,
            variant,
            x0,
        })
    }

    /// Starts from `x0 = 0`.
    pub fn from_zero(
        bundle: &'a OperatorBundle,
        data: &'a [f64],
        policy: &'a StepPolicy,
        variant: Variant,
    ) -> Result<Self> {
        let m = bundle.grid().len();
        Self::new(bundle, data, policy, variant, vec![0.0; m])
    }

    pub fn bundle(&self) -> &'a OperatorBundle {
        self.bundle
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }
}

impl Iteration for HilbertSolver<'_> {
    type State = SolverState;

    fn rows(&self) -> usize {
        self.bundle.len()
    }

    fn start(&self) -> SolverState {
        SolverState::new(self.x0.clone())
    }

    fn advance(&self, state: &mut SolverState, i: usize) -> Result<()> {
        let row = self.bundle.row(i);
        let r = row.apply_unchecked(&state.x_cur) - self.data[i];
        let eta = self.policy.step_size(self.bundle, i, r.abs())?;
        match self.variant {
            Variant::Shb => ima_update(state, row, r, eta),
            Variant::ShbTwoStep => {
                let (alpha, beta) = step_coefficients(state.n);
                two_step_update(state, row, r, eta, alpha, beta);
            }
            Variant::Sgd => sgd_update(state, row, r, eta),
        }
        Ok(())
    }

    fn iterate<'s>(&self, state: &'s SolverState) -> &'s [f64] {
        &state.x_cur
    }
}

/// Constants entering the a-priori bounds for a constant step policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateConstants {
    /// `min_i (1 - eta_i ||A_i||^2)`
    pub c0: f64,
    /// `max_i eta_i`
    pub eta_bar: f64,
    /// `||x0 - x^dagger||^2 + c0 sum_i lambda_i^2 / eta_i`
    pub m0: f64,
}

impl RateConstants {
    /// `c0` and `eta_bar` from a policy's nominal step sizes; `m0` is supplied by the caller.
    pub fn from_policy(bundle: &OperatorBundle, policy: &StepPolicy, m0: f64) -> Result<Self> {
        let etas = policy.nominal_etas(bundle)?;
        let c0 = etas
            .iter()
            .zip(bundle.rows())
            .map(|(eta, row)| 1.0 - eta * row.op_norm_sq())
            .fold(f64::INFINITY, f64::min);
        let eta_bar = etas.iter().copied().fold(0.0, f64::max);
        Self::new(c0, eta_bar, m0)
    }

    pub fn new(c0: f64, eta_bar: f64, m0: f64) -> Result<Self> {
        if !(c0 > 0.0 && c0 <= 1.0) {
            return Err(Error::Config(format!(
                "c0 = {c0} outside (0, 1]; step sizes violate eta_i ||A_i||^2 < 1"
            )));
        }
        if !(eta_bar > 0.0) || !(m0 >= 0.0) {
            return Err(Error::Config("eta_bar must be positive and M0 nonnegative".into()));
        }
        Ok(Self { c0, eta_bar, m0 })
    }
}

/// A-priori stopping index `n_delta = ceil(p / delta) - 1`.
pub fn a_priori_stop(p: usize, total_level: f64) -> Result<usize> {
    if !(total_level > 0.0) || p == 0 {
        return Err(Error::Config(format!(
            "a-priori stopping needs delta > 0 and p >= 1, got delta={total_level}, p={p}"
        )));
    }
    let n = (p as f64 / total_level).ceil();
    if !n.is_finite() || n > usize::MAX as f64 {
        return Err(Error::Config("stopping index overflows".into()));
    }
    Ok(n as usize - 1)
}

/// Stability estimate `E||x_n^delta - x_n||^2 <= eta_bar n delta^2 / (c0 p)`.
pub fn stability_bound(n: usize, total_level: f64, p: usize, constants: &RateConstants) -> f64 {
    constants.eta_bar * n as f64 * total_level * total_level / (constants.c0 * p as f64)
}

/// Exact-data rate `E||x_n - x^dagger||^2 <= p M0 / (c0 (n+1))`.
pub fn rate_bound(n: usize, p: usize, constants: &RateConstants) -> f64 {
    p as f64 * constants.m0 / (constants.c0 * (n + 1) as f64)
}
