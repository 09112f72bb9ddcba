//! Test problems: first-kind integral equations sampled at `p` points.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, Error, Result};
use crate::linops::{Grid, OperatorBundle};

/// Stream id reserved for noise generation under a given seed.
pub const NOISE_STREAM: u64 = u64::MAX;

/// A discretized linear system `A x = y` with a known solution.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub name: String,
    pub grid: Arc<Grid>,
    pub sample_points: Vec<f64>,
    pub bundle: OperatorBundle,
    pub truth: Vec<f64>,
    pub exact_data: Vec<f64>,
}

impl ProblemInstance {
    /// Assembles an instance, synthesizing the exact data from `truth`.
    pub fn new(
        name: impl Into<String>,
        bundle: OperatorBundle,
        sample_points: Vec<f64>,
        truth: Vec<f64>,
    ) -> Result<Self> {
        check_len(bundle.len(), sample_points.len())?;
        let exact_data = bundle.apply(&truth)?;
        Ok(Self {
            name: name.into(),
            grid: bundle.grid().clone(),
            sample_points,
            bundle,
            truth,
            exact_data,
        })
    }

    /// Number of equations.
    pub fn p(&self) -> usize {
        self.bundle.len()
    }

    /// Number of quadrature nodes.
    pub fn m(&self) -> usize {
        self.grid.len()
    }

    /// Discrete sup-norm of the exact data.
    pub fn data_sup_norm(&self) -> f64 {
        self.exact_data.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    /// Self-describing text dump used by the golden-file tests.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# shbreg problem v1");
        let _ = writeln!(out, "name {}", self.name);
        let _ = writeln!(out, "a {:.17e}", self.grid.a());
        let _ = writeln!(out, "b {:.17e}", self.grid.b());
        let _ = writeln!(out, "p {}", self.p());
        let _ = writeln!(out, "m {}", self.m());
        let _ = writeln!(out, "[grid] node weight truth");
        for ((t, w), x) in self.grid.nodes().iter().zip(self.grid.weights()).zip(&self.truth) {
            let _ = writeln!(out, "{t:.17e} {w:.17e} {x:.17e}");
        }
        let _ = writeln!(out, "[data] sample exact");
        for (s, y) in self.sample_points.iter().zip(&self.exact_data) {
            let _ = writeln!(out, "{s:.17e} {y:.17e}");
        }
        out
    }
}

/// The columns of a serialized problem, as read back from text.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemTable {
    pub name: String,
    pub a: f64,
    pub b: f64,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub truth: Vec<f64>,
    pub sample_points: Vec<f64>,
    pub exact_data: Vec<f64>,
}

impl ProblemTable {
    pub fn from_instance(problem: &ProblemInstance) -> Self {
        Self {
            name: problem.name.clone(),
            a: problem.grid.a(),
            b: problem.grid.b(),
            nodes: problem.grid.nodes().to_vec(),
            weights: problem.grid.weights().to_vec(),
            truth: problem.truth.clone(),
            sample_points: problem.sample_points.clone(),
            exact_data: problem.exact_data.clone(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Config(format!("malformed problem file: {msg}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if !lines.next().is_some_and(|l| l.starts_with("# shbreg problem")) {
            return Err(bad("missing header"));
        }
        let mut field = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad("truncated header"))?;
            line.strip_prefix(key)
                .and_then(|rest| rest.strip_prefix(' '))
                .map(str::to_owned)
                .ok_or_else(|| bad(&format!("expected `{key}`")))
        };
        let name = field("name")?;
        let num = |s: String| s.trim().parse::<f64>().map_err(|_| bad("bad number"));
        let a = num(field("a")?)?;
        let b = num(field("b")?)?;
        let count = |s: String| s.trim().parse::<usize>().map_err(|_| bad("bad count"));
        let p = count(field("p")?)?;
        let m = count(field("m")?)?;
        if !lines.next().is_some_and(|l| l.starts_with("[grid]")) {
            return Err(bad("missing [grid] section"));
        }
        let mut table = Self {
            name,
            a,
            b,
            nodes: Vec::with_capacity(m),
            weights: Vec::with_capacity(m),
            truth: Vec::with_capacity(m),
            sample_points: Vec::with_capacity(p),
            exact_data: Vec::with_capacity(p),
        };
        let parse_row = |line: &str, width: usize| -> Result<Vec<f64>> {
            let cols = line
                .split_whitespace()
                .map(|c| c.parse::<f64>().map_err(|_| bad("bad number")))
                .collect::<Result<Vec<_>>>()?;
            if cols.len() != width {
                return Err(bad("wrong column count"));
            }
            Ok(cols)
        };
        for _ in 0..m {
            let cols = parse_row(lines.next().ok_or_else(|| bad("truncated grid"))?, 3)?;
            table.nodes.push(cols[0]);
            table.weights.push(cols[1]);
            table.truth.push(cols[2]);
        }
        if !lines.next().is_some_and(|l| l.starts_with("[data]")) {
            return Err(bad("missing [data] section"));
        }
        for _ in 0..p {
            let cols = parse_row(lines.next().ok_or_else(|| bad("truncated data"))?, 2)?;
            table.sample_points.push(cols[0]);
            table.exact_data.push(cols[1]);
        }
        if lines.next().is_some() {
            return Err(bad("trailing content"));
        }
        Ok(table)
    }
}

/// Noisy observations `y_i^delta = y_i + delta_rel * ||y||_inf * eps_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyData {
    pub values: Vec<f64>,
    pub per_eq_levels: Vec<f64>,
    pub total_level: f64,
    pub rel_level: f64,
    pub seed: u64,
}

impl NoisyData {
    /// Noise-free data wrapped as a `NoisyData` with zero levels.
    pub fn exact(problem: &ProblemInstance) -> Self {
        Self {
            values: problem.exact_data.clone(),
            per_eq_levels: vec![0.0; problem.p()],
            total_level: 0.0,
            rel_level: 0.0,
            seed: 0,
        }
    }
}

/// Uniform equispaced sample points `s_i = a + (i - 1)(b - a)/(p - 1)`.
pub fn sample_points(a: f64, b: f64, p: usize) -> Vec<f64> {
    let h = (b - a) / (p - 1) as f64;
    (0..p)
        .map(|i| if i == p - 1 { b } else { a + i as f64 * h })
        .collect()
}

/// Convolution profile of the first example: `(1 + cos(pi s / 3))` on `|s| < 3`, zero outside.
pub fn example1_profile(s: f64) -> f64 {
    if s.abs() < 3.0 {
        1.0 + (PI * s / 3.0).cos()
    } else {
        0.0
    }
}

pub fn example1_kernel(s: f64, t: f64) -> f64 {
    example1_profile(s - t)
}

pub fn example1_truth(t: f64) -> f64 {
    (PI * t / 12.0).sin() + (PI * t / 3.0).sin() + t * t * (1.0 - t) / 200.0
}

pub fn example2_kernel(s: f64, t: f64) -> f64 {
    4.0 * (-(s - t) * (s - t) / 0.0064).exp()
}

/// Unnormalized density of the second example.
pub fn example2_bumps(t: f64) -> f64 {
    (-60.0 * (t - 0.3) * (t - 0.3)).exp() + 0.3 * (-40.0 * (t - 0.8) * (t - 0.8)).exp()
}

/// Convolution equation on `[-6, 6]` with a smooth cosine kernel.
pub fn build_example1(p: usize, m: usize) -> Result<ProblemInstance> {
    if p < 2 || m < 2 {
        return Err(Error::Config(format!("example 1 needs p >= 2 and m >= 2, got p={p}, m={m}")));
    }
    let grid = Arc::new(Grid::trapezoid(-6.0, 6.0, m)?);
    let points = sample_points(-6.0, 6.0, p);
    let bundle = OperatorBundle::from_kernel(grid.clone(), &points, example1_kernel)?;
    let truth = grid.nodes().iter().map(|&t| example1_truth(t)).collect();
    ProblemInstance::new("example1", bundle, points, truth)
}

/// Gaussian-kernel equation on `[0, 1]` whose solution is a probability density.
///
/// The quadrature grid coincides with the `p` sample points.
pub fn build_example2(p: usize) -> Result<ProblemInstance> {
    if p < 2 {
        return Err(Error::Config(format!("example 2 needs p >= 2, got {p}")));
    }
    let grid = Arc::new(Grid::trapezoid(0.0, 1.0, p)?);
    let points = grid.nodes().to_vec();
    let bundle = OperatorBundle::from_kernel(grid.clone(), &points, example2_kernel)?;
    let raw: Vec<f64> = grid.nodes().iter().map(|&t| example2_bumps(t)).collect();
    let c = 1.0 / grid.integrate(&raw);
    let truth = raw.into_iter().map(|v| c * v).collect();
    ProblemInstance::new("example2", bundle, points, truth)
}

/// Perturbs the exact data with seeded uniform noise of relative level `rel_level`.
pub fn add_noise(problem: &ProblemInstance, rel_level: f64, seed: u64) -> Result<NoisyData> {
    if !(rel_level >= 0.0) || !rel_level.is_finite() {
        return Err(Error::Config(format!("noise level must be nonnegative, got {rel_level}")));
    }
    let level = rel_level * problem.data_sup_norm();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // index streams use ids 0.. for runs; noise gets its own
    rng.set_stream(NOISE_STREAM);
    let values = problem
        .exact_data
        .iter()
        .map(|&y| y + level * rng.random_range(-1.0..=1.0))
        .collect();
    let p = problem.p();
    Ok(NoisyData {
        values,
        per_eq_levels: vec![level; p],
        total_level: (p as f64).sqrt() * level,
        rel_level,
        seed,
    })
}

/// Like [`add_noise`], but parameterized by the total level `delta = sqrt(sum delta_i^2)`.
pub fn add_noise_total(problem: &ProblemInstance, total_level: f64, seed: u64) -> Result<NoisyData> {
    let sup = problem.data_sup_norm();
    if sup == 0.0 {
        return Err(Error::Config("exact data vanish; relative noise is undefined".into()));
    }
    let rel = total_level / ((problem.p() as f64).sqrt() * sup);
    let mut data = add_noise(problem, rel, seed)?;
    // reuse the requested value instead of the round trip through `rel`
    data.total_level = total_level;
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example1_kernel_values() {
        for s in [-6.0, -1.3, 0.0, 2.5, 6.0] {
            assert_eq!(example1_kernel(s, s), 2.0);
        }
        assert!(example1_profile(3.0).abs() < 1e-15);
        assert!(example1_profile(-3.0).abs() < 1e-15);
        // left limit at the cutoff matches the zero outside
        assert!(example1_profile(3.0 - 1e-9).abs() < 1e-15);
        assert_eq!(example1_profile(4.2), 0.0);
        assert_eq!(example1_truth(0.0), 0.0);
    }

    #[test]
    fn example1_kernel_is_symmetric_on_nodes() {
        let g = Grid::trapezoid(-6.0, 6.0, 61).unwrap();
        for &s in g.nodes() {
            for &t in g.nodes() {
                assert_eq!(example1_kernel(s, t), example1_kernel(t, s));
            }
        }
    }

    #[test]
    fn example1_layout() {
        let prob = build_example1(7, 25).unwrap();
        assert_eq!(prob.p(), 7);
        assert_eq!(prob.m(), 25);
        assert_eq!(prob.sample_points[0], -6.0);
        assert_eq!(prob.sample_points[3], 0.0);
        assert_eq!(prob.sample_points[6], 6.0);
        assert!(matches!(build_example1(1, 10), Err(Error::Config(_))));
        assert!(matches!(build_example1(5, 1), Err(Error::Config(_))));
    }

    #[test]
    fn exact_data_matches_operator() {
        let prob = build_example1(11, 101).unwrap();
        let again = prob.bundle.apply(&prob.truth).unwrap();
        for (a, b) in again.iter().zip(&prob.exact_data) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300));
        }
    }

    #[test]
    fn example2_truth_is_a_density() {
        let prob = build_example2(200).unwrap();
        assert_eq!(example2_kernel(0.4, 0.4), 4.0);
        assert!((prob.grid.integrate(&prob.truth) - 1.0).abs() < 1e-12);
        assert!(prob.truth.iter().all(|&v| v > 0.0));
        assert_eq!(prob.m(), prob.p());
        assert_eq!(prob.sample_points, prob.grid.nodes());
        assert!(matches!(build_example2(1), Err(Error::Config(_))));
    }

    #[test]
    fn zero_noise_is_exact() {
        let prob = build_example1(9, 50).unwrap();
        let data = add_noise(&prob, 0.0, 3).unwrap();
        assert_eq!(data.values, prob.exact_data);
        assert_eq!(data.total_level, 0.0);
    }

    #[test]
    fn noise_respects_levels() {
        let prob = build_example1(40, 200).unwrap();
        let data = add_noise(&prob, 0.05, 11).unwrap();
        let sup = prob.data_sup_norm();
        for (i, (v, y)) in data.values.iter().zip(&prob.exact_data).enumerate() {
            assert!((v - y).abs() <= data.per_eq_levels[i]);
            assert_eq!(data.per_eq_levels[i], 0.05 * sup);
        }
        let expected = (40f64).sqrt() * 0.05 * sup;
        assert!((data.total_level - expected).abs() <= 1e-12 * expected);
        let from_levels = data.per_eq_levels.iter().map(|d| d * d).sum::<f64>().sqrt();
        assert!((data.total_level - from_levels).abs() <= 1e-12 * expected);
    }

    #[test]
    fn noise_is_seeded() {
        let prob = build_example1(20, 100).unwrap();
        let a = add_noise(&prob, 0.1, 42).unwrap();
        let b = add_noise(&prob, 0.1, 42).unwrap();
        let c = add_noise(&prob, 0.1, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.values, c.values);
        assert!(add_noise(&prob, -0.1, 1).is_err());
    }

    #[test]
    fn total_level_noise() {
        let prob = build_example1(20, 100).unwrap();
        let data = add_noise_total(&prob, 0.01, 5).unwrap();
        let from_levels = data.per_eq_levels.iter().map(|d| d * d).sum::<f64>().sqrt();
        assert!((from_levels - 0.01).abs() < 1e-14);
    }

    #[test]
    fn text_round_trip() {
        let prob = build_example1(4, 9).unwrap();
        let table = ProblemTable::parse(&prob.to_text()).unwrap();
        assert_eq!(table, ProblemTable::from_instance(&prob));
        assert!(ProblemTable::parse("name x").is_err());
        let truncated: String = prob.to_text().lines().take(10).collect::<Vec<_>>().join("\n");
        assert!(ProblemTable::parse(&truncated).is_err());
    }
}
