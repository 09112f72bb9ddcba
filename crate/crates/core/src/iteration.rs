//! Row-action iteration driver shared by the Hilbert and dual solvers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Seeded source of uniform row indices.
///
/// Stream `(seed, stream)` is independent of every other stream id, so run
/// `r` of an ensemble is reproducible regardless of scheduling order.
#[derive(Debug, Clone)]
pub struct IndexStream {
    rng: ChaCha8Rng,
    rows: usize,
}

impl IndexStream {
    pub fn new(seed: u64, stream: u64, rows: usize) -> Self {
        assert!(rows > 0, "index stream needs at least one row");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, rows }
    }

    /// Next index, uniform on `0..rows`.
    pub fn next_index(&mut self) -> usize {
        self.rng.random_range(0..self.rows)
    }

    pub fn path(&mut self, len: usize) -> Vec<usize> {
        (0..len).map(|_| self.next_index()).collect()
    }
}

/// A randomized row-action method: a state plus one update per drawn row.
pub trait Iteration: Sync {
    type State: Send;

    /// Number of equations `p` the indices range over.
    fn rows(&self) -> usize;

    fn start(&self) -> Self::State;

    /// Applies one update using equation `row`.
    fn advance(&self, state: &mut Self::State, row: usize) -> Result<()>;

    /// The primal iterate `x_n` held by `state`.
    fn iterate<'s>(&self, state: &'s Self::State) -> &'s [f64];
}

/// Runs `method` along a fixed index path.
///
/// `observer` sees every iterate, `n = 0` included; values it returns are collected.
pub fn run_path<M, T, F>(method: &M, path: &[usize], mut observer: F) -> Result<Vec<T>>
where
    M: Iteration + ?Sized,
    F: FnMut(usize, &[f64]) -> Option<T>,
{
    let rows = method.rows();
    let mut state = method.start();
    let mut out = Vec::new();
    out.extend(observer(0, method.iterate(&state)));
    for (k, &i) in path.iter().enumerate() {
        if i >= rows {
            return Err(Error::Config(format!("row index {i} out of range for {rows} rows")));
        }
        method.advance(&mut state, i)?;
        out.extend(observer(k + 1, method.iterate(&state)));
    }
    Ok(out)
}

/// Runs `n_iters` steps with indices drawn i.i.d. uniformly from `stream`.
pub fn run<M, T, F>(method: &M, n_iters: usize, stream: &mut IndexStream, mut observer: F) -> Result<Vec<T>>
where
    M: Iteration + ?Sized,
    F: FnMut(usize, &[f64]) -> Option<T>,
{
    let mut state = method.start();
    let mut out = Vec::new();
    out.extend(observer(0, method.iterate(&state)));
    for n in 1..=n_iters {
        let i = stream.next_index();
        method.advance(&mut state, i)?;
        out.extend(observer(n, method.iterate(&state)));
    }
    Ok(out)
}
