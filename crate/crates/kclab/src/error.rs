use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("coefficient p[{index}] = {value} is not positive")]
    NonPositiveCoefficient { index: usize, value: f64 },
    #[error("interfaces are not strictly increasing inside (0, L): {0}")]
    UnorderedInterfaces(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("degenerate grid: {0}")]
    DegenerateGrid(String),
    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),
    #[error("empty admissibility window for m_j: lower {lower} >= upper {upper}")]
    EmptyWindow { lower: f64, upper: f64 },
    #[error("point (t={t}, x={x}) outside the weight domain")]
    OutOfDomain { t: f64, x: f64 },
    #[error("linear solve failed: {0}")]
    LinearSolveFailure(String),
    #[error("Picard iteration did not converge at step {step} after {iterations} sweeps")]
    PicardDivergence { step: usize, iterations: usize },
    #[error("inadmissible function: {0}")]
    InadmissibleFunction(String),
    #[error("coefficient is not strictly increasing: {0}")]
    MonotonicityViolated(String),
    #[error("conjugate gradients stalled at iteration {iterations} (relative residual {residual:e})")]
    CGStalled { iterations: usize, residual: f64 },
    #[error("weight underflow: {0}")]
    WeightUnderflow(String),
    #[error("outer iteration did not converge; trace {trace:?}")]
    NoConvergence { trace: Vec<f64> },
    #[error("grid is not symmetric about L/2")]
    AsymmetricGrid,
    #[error("admissibility violated: {0}")]
    AdmissibilityViolated(String),
    #[error("optimizer stalled: {0}")]
    OptimizerStalled(String),
    #[error("io: {0}")]
    Io(String),
}

impl Error {
    /// Stable identifier used in reports and CSV rows.
    pub fn name(&self) -> &'static str {
        match self {
            Error::NonPositiveCoefficient { .. } => "NonPositiveCoefficient",
            Error::UnorderedInterfaces(_) => "UnorderedInterfaces",
            Error::InvalidInput(_) => "InvalidInput",
            Error::DegenerateGrid(_) => "DegenerateGrid",
            Error::HypothesisViolated(_) => "HypothesisViolated",
            Error::EmptyWindow { .. } => "EmptyWindow",
            Error::OutOfDomain { .. } => "OutOfDomain",
            Error::LinearSolveFailure(_) => "LinearSolveFailure",
            Error::PicardDivergence { .. } => "PicardDivergence",
            Error::InadmissibleFunction(_) => "InadmissibleFunction",
            Error::MonotonicityViolated(_) => "MonotonicityViolated",
            Error::CGStalled { .. } => "CGStalled",
            Error::WeightUnderflow(_) => "WeightUnderflow",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::AsymmetricGrid => "AsymmetricGrid",
            Error::AdmissibilityViolated(_) => "AdmissibilityViolated",
            Error::OptimizerStalled(_) => "OptimizerStalled",
            Error::Io(_) => "Io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
