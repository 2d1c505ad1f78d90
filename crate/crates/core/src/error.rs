use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid budget: {0}")]
    InvalidBudget(String),
    #[error("shape mismatch: expected {expected}, got {actual} ({context})")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("degenerate hyperplane: zero normal vector")]
    DegenerateHyperplane,
    #[error("degenerate perturbation: zero energy")]
    DegeneratePerturbation,
    #[error("statistic undefined on empty input")]
    UndefinedStatistic,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("argument outside domain: {0}")]
    Domain(String),
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn shape(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::Shape {
            context,
            expected,
            actual,
        }
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::shape(context, expected, actual))
    }
}
