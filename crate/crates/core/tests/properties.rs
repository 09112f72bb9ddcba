use std::sync::Arc;

use proptest::prelude::*;
use shbreg::banach::{BanachSolver, Regularizer};
use shbreg::harness::{monte_carlo, random_instance, ErrorTrace, Norm, Stride};
use shbreg::iteration::{run_path, IndexStream};
use shbreg::linops::{Grid, OperatorBundle, RowOperator};
use shbreg::problems::add_noise;
use shbreg::shb::{heavy_ball_step, sgd_step, shb_step_ima, HilbertSolver, SolverState, StepPolicy, Variant};

fn grid(m: usize) -> Arc<Grid> {
    Arc::new(Grid::trapezoid(0.0, 1.0, m).unwrap())
}

fn vec_of(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, len)
}

fn row_and_vec() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..40).prop_flat_map(|m| (vec_of(m), vec_of(m)))
}

fn max_rel_gap(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = b.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if diff == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adjoint_duality((k, x) in row_and_vec(), v in -10.0..10.0f64) {
        let g = grid(k.len());
        let row = RowOperator::new(g.clone(), k).unwrap();
        let lhs = row.apply(&x).unwrap() * v;
        let rhs = g.dot(&x, &row.adjoint_apply(v));
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn row_norm_is_sharp((k, x) in row_and_vec()) {
        let g = grid(k.len());
        let row = RowOperator::new(g.clone(), k.clone()).unwrap();
        let ax = row.apply(&x).unwrap();
        prop_assert!(ax * ax <= row.op_norm_sq() * g.norm_sq(&x) * (1.0 + 1e-12) + 1e-300);
        // attained at x = kernel row
        let ak = row.apply(&k).unwrap();
        let attained = row.op_norm_sq() * g.norm_sq(&k);
        prop_assert!((ak * ak - attained).abs() <= 1e-12 * attained.max(1e-300));
    }

    #[test]
    fn bundle_norm_dominates_rows(p in 1usize..8, m in 2usize..24, seed in any::<u64>()) {
        let problem = random_instance(p, m, seed).unwrap();
        let b = &problem.bundle;
        let max_row = b.rows().iter().map(|r| r.op_norm_sq()).fold(0.0, f64::max);
        let sum_rows: f64 = b.rows().iter().map(|r| r.op_norm_sq()).sum();
        prop_assert!(b.full_norm_sq() >= max_row * (1.0 - 1e-12));
        prop_assert!(b.full_norm_sq() <= 1.01 * sum_rows * (1.0 + 1e-9));
    }

    #[test]
    fn two_step_and_moving_average_agree(seed in any::<u64>(), mu0 in 0.05..0.95f64, rel in 0.0..0.1f64) {
        let problem = random_instance(5, 16, seed).unwrap();
        let data = add_noise(&problem, rel, seed).unwrap();
        let policy = StepPolicy::constant(mu0).unwrap();
        let a = HilbertSolver::from_zero(&problem.bundle, &data.values, &policy, Variant::ShbTwoStep).unwrap();
        let b = HilbertSolver::from_zero(&problem.bundle, &data.values, &policy, Variant::Shb).unwrap();
        let path = IndexStream::new(seed, 0, 5).path(200);
        let xs = run_path(&a, &path, |_, x| Some(x.to_vec())).unwrap();
        let ys = run_path(&b, &path, |_, x| Some(x.to_vec())).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            prop_assert!(max_rel_gap(x, y) <= 1e-10);
        }
    }

    #[test]
    fn unit_coefficients_are_sgd(seed in any::<u64>(), steps in 1usize..50, eta in 0.01..1.0f64) {
        let problem = random_instance(4, 12, seed).unwrap();
        let path = IndexStream::new(seed, 1, 4).path(steps);
        let mut a = SolverState::new(vec![0.0; 12]);
        let mut b = SolverState::new(vec![0.0; 12]);
        for &i in &path {
            let row = problem.bundle.row(i);
            let y = problem.exact_data[i];
            heavy_ball_step(&mut a, row, y, eta, 1.0, 0.0).unwrap();
            sgd_step(&mut b, row, y, eta).unwrap();
        }
        prop_assert_eq!(a, b);
    }

    #[test]
    fn moving_average_invariant(seed in any::<u64>(), steps in 1usize..100) {
        let problem = random_instance(3, 10, seed).unwrap();
        let path = IndexStream::new(seed, 2, 3).path(steps);
        let mut s = SolverState::new(vec![0.0; 10]);
        for &i in &path {
            let row = problem.bundle.row(i);
            let eta = 0.5 / row.op_norm_sq();
            shb_step_ima(&mut s, row, problem.exact_data[i], eta).unwrap();
            let n = s.n as f64;
            let rebuilt: Vec<f64> = s.x_cur.iter().zip(&s.x_prev).map(|(c, p)| c + n * (c - p)).collect();
            prop_assert!(max_rel_gap(&rebuilt, &s.z) <= 1e-10);
        }
    }

    #[test]
    fn ensembles_are_deterministic(seed in any::<u64>(), runs in 1usize..6) {
        let problem = random_instance(3, 8, seed).unwrap();
        let policy = StepPolicy::constant(0.6).unwrap();
        let solver = HilbertSolver::from_zero(&problem.bundle, &problem.exact_data, &policy, Variant::Shb).unwrap();
        let exp = ErrorTrace::new(solver, &problem.grid, &problem.truth, Norm::L2).unwrap();
        let a = monte_carlo(&exp, 30, Stride::dense(), runs, seed).unwrap();
        let b = monte_carlo(&exp, 30, Stride::dense(), runs, seed).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn entropy_iterates_stay_on_simplex(seed in any::<u64>(), rel in 0.0..0.5f64) {
        let problem = random_instance(6, 20, seed).unwrap();
        let data = add_noise(&problem, rel, seed).unwrap();
        let reg = Regularizer::entropy_simplex(problem.grid.clone()).unwrap();
        let policy = StepPolicy::full_norm_constant(0.98, reg.mu()).unwrap();
        let solver = BanachSolver::new(&problem.bundle, &data.values, &reg, &policy).unwrap();
        let path = IndexStream::new(seed, 0, 6).path(300);
        let worst = run_path(&solver, &path, |_, x| {
            let neg = x.iter().fold(0.0_f64, |m, &v| m.max(-v));
            Some(neg.max((problem.grid.integrate(x) - 1.0).abs()))
        })
        .unwrap()
        .into_iter()
        .fold(0.0, f64::max);
        prop_assert!(worst <= 1e-12);
    }

    #[test]
    fn quadratic_regularizer_reduces_to_hilbert(seed in any::<u64>(), center in vec_of(16), mu0 in 0.05..0.95f64) {
        let problem = random_instance(5, 16, seed).unwrap();
        let data = add_noise(&problem, 0.01, seed).unwrap();
        let policy = StepPolicy::constant(mu0).unwrap();
        let reg = Regularizer::quadratic(problem.grid.clone(), center.clone()).unwrap();
        let dual = BanachSolver::new(&problem.bundle, &data.values, &reg, &policy).unwrap();
        let primal = HilbertSolver::new(&problem.bundle, &data.values, &policy, Variant::Shb, center).unwrap();
        let path = IndexStream::new(seed, 0, 5).path(500);
        let xs = run_path(&dual, &path, |_, x| Some(x.to_vec())).unwrap();
        let ys = run_path(&primal, &path, |_, x| Some(x.to_vec())).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            prop_assert!(max_rel_gap(x, y) <= 1e-10);
        }
    }

    #[test]
    fn bregman_distance_is_nonnegative(m in 3usize..30, seed in any::<u64>(), a in vec_of(30), b in vec_of(30)) {
        let g = grid(m);
        let reg = Regularizer::entropy_simplex(g.clone()).unwrap();
        // densities from arbitrary duals
        let xa = reg.mirror_map(&a[..m].iter().map(|v| 3.0 * v).collect::<Vec<_>>()).unwrap();
        let xb = reg.mirror_map(&b[..m].iter().map(|v| 3.0 * v + (seed % 7) as f64).collect::<Vec<_>>()).unwrap();
        prop_assert!(reg.bregman_distance(&xa, &xb).unwrap() >= -1e-12);
        prop_assert!(reg.bregman_distance(&xa, &xa).unwrap().abs() <= 1e-12);
        let quad = Regularizer::quadratic(g, vec![0.5; m]).unwrap();
        prop_assert!(quad.bregman_distance(&a[..m], &b[..m]).unwrap() >= -1e-12);
    }

    #[test]
    fn entropy_mirror_map_ignores_constant_shifts(xi in vec_of(25), c in -50.0..50.0f64) {
        let reg = Regularizer::entropy_simplex(grid(25)).unwrap();
        let shifted: Vec<f64> = xi.iter().map(|v| 5.0 * v + c).collect();
        let base: Vec<f64> = xi.iter().map(|v| 5.0 * v).collect();
        let x = reg.mirror_map(&base).unwrap();
        let y = reg.mirror_map(&shifted).unwrap();
        prop_assert!(max_rel_gap(&y, &x) <= 1e-12);
    }
}

#[test]
fn bundle_rejects_mixed_grids() {
    let a = RowOperator::new(grid(4), vec![1.0; 4]).unwrap();
    let b = RowOperator::new(grid(4), vec![1.0; 4]).unwrap();
    // equal grids in separate allocations are fine
    assert!(OperatorBundle::new(grid(4), vec![a.clone(), b]).is_ok());
    let c = RowOperator::new(Arc::new(Grid::trapezoid(0.0, 2.0, 4).unwrap()), vec![1.0; 4]).unwrap();
    assert!(OperatorBundle::new(grid(4), vec![a, c]).is_err());
}
