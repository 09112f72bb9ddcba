//! Discretized integral operators on a quadrature-weighted function space.
//!
//! Functions on `[a, b]` are represented by their values at the nodes of a
//! [`Grid`]. The space carries the weighted inner product
//! `<x, y>_w = sum_j w_j x_j y_j`, where `w` are the trapezoidal weights, so
//! discrete adjoints and norms approximate their continuous counterparts.
//! Each equation `A_i x = y_i` is a [`RowOperator`] mapping into the reals.

use std::sync::Arc;

use crate::error::{check_len, Error, Result};

/// Safety factor applied to power-iteration estimates of the full norm so
/// that step-size constraints built from it stay strict.
pub const NORM_SAFETY_FACTOR: f64 = 1.01;

/// Relative tolerance used when a bundle estimates its own norm.
pub const DEFAULT_NORM_TOL: f64 = 1e-10;

/// Iteration cap for the power method.
pub const MAX_POWER_ITERS: usize = 10_000;

/// Quadrature nodes and weights on `[a, b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    a: f64,
    b: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Grid {
    /// Composite trapezoidal rule with `m` equally spaced nodes.
    pub fn trapezoid(a: f64, b: f64, m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::Config(format!("grid needs at least 2 nodes, got {m}")));
        }
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::Config(format!("invalid interval [{a}, {b}]")));
        }
        let h = (b - a) / (m - 1) as f64;
        let nodes: Vec<f64> = (0..m)
            .map(|j| if j == m - 1 { b } else { a + j as f64 * h })
            .collect();
        let mut weights = vec![h; m];
        weights[0] = 0.5 * h;
        weights[m - 1] = 0.5 * h;
        Ok(Self { a, b, nodes, weights })
    }

    /// Builds a grid from explicit nodes and weights, checking the invariants.
    pub fn from_parts(a: f64, b: f64, nodes: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        check_len(nodes.len(), weights.len())?;
        if nodes.len() < 2 {
            return Err(Error::Config("grid needs at least 2 nodes".into()));
        }
        if nodes[0] != a || nodes[nodes.len() - 1] != b {
            return Err(Error::Config("grid endpoints must match the interval".into()));
        }
        if nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("grid nodes must be strictly increasing".into()));
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::Config("quadrature weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if ((total - (b - a)) / (b - a)).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "weights sum to {total}, expected {}",
                b - a
            )));
        }
        Ok(Self { a, b, nodes, weights })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weighted inner product `sum_j w_j x_j y_j`.
    pub fn dot(&self, x: &[f64], y: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.len());
        debug_assert_eq!(y.len(), self.len());
        self.weights
            .iter()
            .zip(x)
            .zip(y)
            .map(|((w, a), b)| w * a * b)
            .sum()
    }

    pub fn norm_sq(&self, x: &[f64]) -> f64 {
        self.dot(x, x)
    }

    /// Squared weighted distance `||x - y||_w^2`.
    pub fn dist_sq(&self, x: &[f64], y: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(x)
            .zip(y)
            .map(|((w, a), b)| w * (a - b) * (a - b))
            .sum()
    }

    /// Trapezoidal integral of the sampled function.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        debug_assert_eq!(f.len(), self.len());
        self.weights.iter().zip(f).map(|(w, v)| w * v).sum()
    }

    /// Discrete `L^1` norm.
    pub fn l1_norm(&self, f: &[f64]) -> f64 {
        self.weights.iter().zip(f).map(|(w, v)| w * v.abs()).sum()
    }
}

/// One equation `A_i x = int k(s_i, t) x(t) dt`, discretized on a grid.
#[derive(Debug, Clone)]
pub struct RowOperator {
    grid: Arc<Grid>,
    kernel_row: Vec<f64>,
    // w_j * k_j, so that `apply` is a plain dot product
    weighted: Vec<f64>,
    norm_sq: f64,
}

impl RowOperator {
    pub fn new(grid: Arc<Grid>, kernel_row: Vec<f64>) -> Result<Self> {
        check_len(grid.len(), kernel_row.len())?;
        if kernel_row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("kernel row contains non-finite values".into()));
        }
        let weighted: Vec<f64> = grid
            .weights()
            .iter()
            .zip(&kernel_row)
            .map(|(w, k)| w * k)
            .collect();
        let norm_sq = weighted.iter().zip(&kernel_row).map(|(wk, k)| wk * k).sum();
        Ok(Self {
            grid,
            kernel_row,
            weighted,
            norm_sq,
        })
    }

    /// Samples `kernel(s, t_j)` at every grid node.
    pub fn from_kernel(grid: Arc<Grid>, s: f64, kernel: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let row = grid.nodes().iter().map(|&t| kernel(s, t)).collect();
        Self::new(grid, row)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn kernel_row(&self) -> &[f64] {
        &self.kernel_row
    }

    pub fn len(&self) -> usize {
        self.kernel_row.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernel_row.is_empty()
    }

    /// `A_i x`, evaluated by the grid's quadrature.
    pub fn apply(&self, x: &[f64]) -> Result<f64> {
        check_len(self.len(), x.len())?;
        Ok(self.apply_unchecked(x))
    }

    #[inline]
    pub(crate) fn apply_unchecked(&self, x: &[f64]) -> f64 {
        self.weighted.iter().zip(x).map(|(a, b)| a * b).sum()
    }

    /// `A_i^* v` with respect to the weighted inner product: the kernel row scaled by `v`.
    pub fn adjoint_apply(&self, v: f64) -> Vec<f64> {
        self.kernel_row.iter().map(|k| k * v).collect()
    }

    /// `out += scale * A_i^* 1`
    #[inline]
    pub(crate) fn axpy_adjoint(&self, scale: f64, out: &mut [f64]) {
        for (o, k) in out.iter_mut().zip(&self.kernel_row) {
            *o += scale * k;
        }
    }

    /// `||A_i||^2 = sum_j w_j k_j^2`.
    pub fn op_norm_sq(&self) -> f64 {
        self.norm_sq
    }
}

/// The stacked operator `A = (A_1, ..., A_p)` together with a cached estimate of `||A||^2`.
#[derive(Debug, Clone)]
pub struct OperatorBundle {
    grid: Arc<Grid>,
    rows: Vec<RowOperator>,
    full_norm_sq: f64,
}

impl OperatorBundle {
    pub fn new(grid: Arc<Grid>, rows: Vec<RowOperator>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Config("operator bundle needs at least one row".into()));
        }
        if rows
            .iter()
            .any(|r| !Arc::ptr_eq(r.grid(), &grid) && **r.grid() != *grid)
        {
            return Err(Error::Config("all rows must share the bundle's grid".into()));
        }
        let mut bundle = Self {
            grid,
            rows,
            full_norm_sq: 0.0,
        };
        bundle.full_norm_sq = bundle.bundle_norm_sq(DEFAULT_NORM_TOL)?;
        Ok(bundle)
    }

    /// Samples `kernel(s_i, t)` for every sample point `s_i`.
    pub fn from_kernel(
        grid: Arc<Grid>,
        sample_points: &[f64],
        kernel: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        let rows = sample_points
            .iter()
            .map(|&s| RowOperator::from_kernel(grid.clone(), s, &kernel))
            .collect::<Result<Vec<_>>>()?;
        Self::new(grid, rows)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn rows(&self) -> &[RowOperator] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &RowOperator {
        &self.rows[i]
    }

    /// Number of equations `p`.
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Cached upper estimate of `||A||^2` (includes [`NORM_SAFETY_FACTOR`]).
    pub fn full_norm_sq(&self) -> f64 {
        self.full_norm_sq
    }

    /// `(A_1 x, ..., A_p x)`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.grid.len(), x.len())?;
        Ok(self.rows.iter().map(|r| r.apply_unchecked(x)).collect())
    }

    /// `A^* lambda = sum_i A_i^* lambda_i`.
    pub fn adjoint_apply(&self, lambda: &[f64]) -> Result<Vec<f64>> {
        check_len(self.len(), lambda.len())?;
        let mut out = vec![0.0; self.grid.len()];
        for (row, &l) in self.rows.iter().zip(lambda) {
            row.axpy_adjoint(l, &mut out);
        }
        Ok(out)
    }

    /// Power iteration on the weighted Gram operator `A^*A`.
    ///
    /// Stops once the Rayleigh quotient changes by less than `tol` (relative)
    /// and returns it multiplied by [`NORM_SAFETY_FACTOR`].
    pub fn bundle_norm_sq(&self, tol: f64) -> Result<f64> {
        if !(tol > 0.0) {
            return Err(Error::Config(format!("power iteration tolerance must be positive, got {tol}")));
        }
        let grid = &self.grid;
        let m = grid.len();
        // Deterministic start with no special symmetry.
        let mut v: Vec<f64> = (0..m).map(|j| 1.0 + 0.25 * ((j as f64) * 0.7 + 0.3).sin()).collect();
        let nv = grid.norm_sq(&v).sqrt();
        v.iter_mut().for_each(|c| *c /= nv);

        let mut u = vec![0.0; m];
        let mut prev = f64::NAN;
        for _ in 0..MAX_POWER_ITERS {
            u.iter_mut().for_each(|c| *c = 0.0);
            for row in &self.rows {
                row.axpy_adjoint(row.apply_unchecked(&v), &mut u);
            }
            // v has unit weighted norm
            let quotient = grid.dot(&v, &u);
            let nu = grid.norm_sq(&u).sqrt();
            if nu == 0.0 {
                return Ok(0.0);
            }
            if !nu.is_finite() {
                return Err(Error::Numerical("power iteration diverged".into()));
            }
            if (quotient - prev).abs() < tol * quotient.abs() {
                return Ok(NORM_SAFETY_FACTOR * quotient);
            }
            prev = quotient;
            for (vc, uc) in v.iter_mut().zip(&u) {
                *vc = uc / nu;
            }
        }
        Err(Error::Numerical(format!(
            "power iteration did not converge within {MAX_POWER_ITERS} iterations"
        )))
    }
}
