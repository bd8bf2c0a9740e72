use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("lasso did not converge after {iterations} sweeps (KKT violation {kkt_violation:.3e})")]
    NotConverged { iterations: usize, kkt_violation: f64 },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("LP iteration limit reached after {iterations} pivots (best lower bound {lower_bound:.6e})")]
    IterationLimit { iterations: usize, lower_bound: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("no feasible debiasing row on the lambda grid")]
    NoFeasibleRow,

    #[error("odd number of observations ({0}); drop one observation before sampling group actions")]
    OddSampleSize(usize),

    #[error("cluster {index} has size {size}; clusters must have even size greater than 2")]
    BadCluster { index: usize, size: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |e| Error::Stage {
            stage,
            source: Box::new(e),
        }
    }

    /// Innermost error, with stage labels peeled off.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for failures of the numerical pipeline rather than of the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self.root(),
            Error::NotConverged { .. }
                | Error::DegenerateFit(_)
                | Error::IterationLimit { .. }
                | Error::NoFeasibleRow
                | Error::Numerical(_)
        )
    }
}
