use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("row {0} has zero operator norm")]
    DegenerateRow(usize),

    #[error("Bregman distance is infinite: reference density vanishes at node {node} where the argument is positive")]
    InfiniteDistance { node: usize },

    #[error("resource guard exceeded: {0}")]
    Resource(String),

    #[error("run {run} (base seed {base_seed}) failed: {source}")]
    RunFailed {
        run: u64,
        base_seed: u64,
        #[source]
        source: Box<Error>,
    },
}

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension { expected, found })
    }
}
