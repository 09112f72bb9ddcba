//! Dual stochastic heavy-ball iteration with a strongly convex regularizer.
//!
//! The momentum recursion runs on the dual variable `xi`, and the primal
//! iterate is recovered through the mirror map `x = grad R^*(xi)`. Two
//! regularizers are provided: negative entropy restricted to probability
//! densities, and the quadratic `1/2 ||x - x0||_w^2` which reduces the method
//! to the Hilbert-space iteration started at `x0`.

use std::sync::Arc;

use crate::error::{check_len, Error, Result};
use crate::iteration::Iteration;
use crate::linops::{Grid, OperatorBundle, RowOperator};
use crate::shb::{step_coefficients, StepPolicy};

#[derive(Debug, Clone, PartialEq)]
pub enum RegularizerKind {
    /// `int x log x` plus the indicator of the probability simplex.
    EntropySimplex,
    /// `1/2 ||x - center||_w^2`.
    Quadratic { center: Vec<f64> },
}

#[derive(Debug, Clone)]
pub struct Regularizer {
    kind: RegularizerKind,
    grid: Arc<Grid>,
    mu: f64,
}

impl Regularizer {
    /// Negative Boltzmann-Shannon entropy on densities; 1/2-strongly convex w.r.t. the `L^1` norm.
    pub fn entropy_simplex(grid: Arc<Grid>) -> Result<Self> {
        if grid.weights().iter().any(|&w| !(w > 0.0)) {
            return Err(Error::Config("entropy regularizer needs positive quadrature weights".into()));
        }
        Ok(Self {
            kind: RegularizerKind::EntropySimplex,
            grid,
            mu: 0.5,
        })
    }

    /// Quadratic regularizer centered at `center`.
    ///
    /// With the convexity convention `R(tx + (1-t)y) + mu t(1-t)||x-y||^2 <= tR(x) + (1-t)R(y)`,
    /// the quadratic has modulus 1/2.
    pub fn quadratic(grid: Arc<Grid>, center: Vec<f64>) -> Result<Self> {
        check_len(grid.len(), center.len())?;
        Ok(Self {
            kind: RegularizerKind::Quadratic { center },
            grid,
            mu: 0.5,
        })
    }

    pub fn kind(&self) -> &RegularizerKind {
        &self.kind
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    /// Strong-convexity modulus.
    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// `R(x)`, evaluated by quadrature. The simplex indicator is not checked.
    pub fn value(&self, x: &[f64]) -> Result<f64> {
        check_len(self.grid.len(), x.len())?;
        Ok(match &self.kind {
            RegularizerKind::EntropySimplex => self
                .grid
                .weights()
                .iter()
                .zip(x)
                .map(|(w, &v)| if v > 0.0 { w * v * v.ln() } else { 0.0 })
                .sum(),
            RegularizerKind::Quadratic { center } => 0.5 * self.grid.dist_sq(x, center),
        })
    }

    /// `grad R^*(xi)`.
    pub fn mirror_map(&self, xi: &[f64]) -> Result<Vec<f64>> {
        check_len(self.grid.len(), xi.len())?;
        let mut out = vec![0.0; xi.len()];
        self.mirror_map_into(xi, &mut out);
        Ok(out)
    }

    pub(crate) fn mirror_map_into(&self, xi: &[f64], out: &mut [f64]) {
        match &self.kind {
            RegularizerKind::EntropySimplex => {
                // shift by the max so exp never overflows
                let top = xi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                for (o, &v) in out.iter_mut().zip(xi) {
                    *o = (v - top).exp();
                }
                let mass = self.grid.integrate(out);
                for o in out.iter_mut() {
                    *o /= mass;
                }
            }
            RegularizerKind::Quadratic { center } => {
                for ((o, &v), c) in out.iter_mut().zip(xi).zip(center) {
                    *o = c + v;
                }
            }
        }
    }

    /// Bregman distance `D(x_bar, x)`.
    ///
    /// For the entropy this is the Kullback-Leibler divergence
    /// `int x_bar log(x_bar / x)` (with `0 log 0 = 0`); for the quadratic it is
    /// `1/2 ||x_bar - x||_w^2`.
    pub fn bregman_distance(&self, x_bar: &[f64], x: &[f64]) -> Result<f64> {
        check_len(self.grid.len(), x_bar.len())?;
        check_len(self.grid.len(), x.len())?;
        match &self.kind {
            RegularizerKind::EntropySimplex => {
                let mut acc = 0.0;
                for (j, ((w, &xb), &xv)) in self.grid.weights().iter().zip(x_bar).zip(x).enumerate() {
                    if xb <= 0.0 {
                        continue;
                    }
                    if xv <= 0.0 {
                        return Err(Error::InfiniteDistance { node: j });
                    }
                    acc += w * xb * (xb / xv).ln();
                }
                Ok(acc)
            }
            RegularizerKind::Quadratic { .. } => Ok(0.5 * self.grid.dist_sq(x_bar, x)),
        }
    }
}

/// Dual iterate pair and the primal image of the current dual point.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    pub xi_cur: Vec<f64>,
    pub xi_prev: Vec<f64>,
    pub x: Vec<f64>,
    pub n: usize,
}

impl DualState {
    /// `xi_{-1} = xi_0 = 0`.
    pub fn new(reg: &Regularizer) -> Self {
        let m = reg.grid().len();
        let xi = vec![0.0; m];
        let mut x = vec![0.0; m];
        reg.mirror_map_into(&xi, &mut x);
        Self {
            xi_prev: xi.clone(),
            xi_cur: xi,
            x,
            n: 0,
        }
    }
}

fn dual_update(state: &mut DualState, reg: &Regularizer, row: &RowOperator, residual: f64, eta: f64) {
    let (alpha, beta) = step_coefficients(state.n);
    let scale = alpha * eta * residual;
    for ((cur, prev), k) in state.xi_cur.iter_mut().zip(state.xi_prev.iter_mut()).zip(row.kernel_row()) {
        let next = *cur - scale * k + beta * (*cur - *prev);
        *prev = *cur;
        *cur = next;
    }
    reg.mirror_map_into(&state.xi_cur, &mut state.x);
    state.n += 1;
}

/// One dual heavy-ball step followed by the mirror map.
pub fn banach_step(
    state: &mut DualState,
    reg: &Regularizer,
    row: &RowOperator,
    y_i: f64,
    eta: f64,
) -> Result<()> {
    check_len(row.len(), state.x.len())?;
    check_len(reg.grid().len(), state.x.len())?;
    let r = row.apply_unchecked(&state.x) - y_i;
    dual_update(state, reg, row, r, eta);
    Ok(())
}

/// `p M0/(n+1) + (n+1) delta^2 / p + delta^2`; the unknown constant in front is left to the caller.
pub fn banach_rate_envelope(n: usize, p: usize, total_level: f64, m0: f64) -> f64 {
    let n1 = (n + 1) as f64;
    let p = p as f64;
    let d2 = total_level * total_level;
    p * m0 / n1 + n1 * d2 / p + d2
}

/// The dual method bound to a problem, data, regularizer and policy.
#[derive(Debug, Clone)]
pub struct BanachSolver<'a> {
    bundle: &'a OperatorBundle,
    data: &'a [f64],
    reg: &'a Regularizer,
    policy: &'a StepPolicy,
}

impl<'a> BanachSolver<'a> {
    pub fn new(
        bundle: &'a OperatorBundle,
        data: &'a [f64],
        reg: &'a Regularizer,
        policy: &'a StepPolicy,
    ) -> Result<Self> {
        check_len(bundle.len(), data.len())?;
        if **reg.grid() != **bundle.grid() {
            return Err(Error::Config("regularizer and operator live on different grids".into()));
        }
        policy.validate_for(bundle)?;
        Ok(Self {
            bundle,
            data,
            reg,
            policy,
        })
    }
}

impl Iteration for BanachSolver<'_> {
    type State = DualState;

    fn rows(&self) -> usize {
        self.bundle.len()
    }

    fn start(&self) -> DualState {
        DualState::new(self.reg)
    }

    fn advance(&self, state: &mut DualState, i: usize) -> Result<()> {
        let row = self.bundle.row(i);
        let r = row.apply_unchecked(&state.x) - self.data[i];
        let eta = self.policy.step_size(self.bundle, i, r.abs())?;
        dual_update(state, self.reg, row, r, eta);
        Ok(())
    }

    fn iterate<'s>(&self, state: &'s DualState) -> &'s [f64] {
        &state.x
    }
}
