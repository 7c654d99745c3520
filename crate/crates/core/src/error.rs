use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema violation: {0}")]
    Schema(String),

    #[error("probabilities sum to {sum} at node {node}")]
    ProbabilitySum { node: String, sum: f64 },

    #[error("leaf {node} has depth {depth}, expected horizon {horizon}")]
    LeafDepth { node: String, depth: usize, horizon: usize },

    #[error("node {node} has price of length {got}, expected {expected}")]
    Dimension { node: String, got: usize, expected: usize },

    #[error("node {node}: missing value for {missing}")]
    MissingValue { node: String, missing: String },

    #[error("internal node {0} has no children")]
    DegenerateNode(String),

    #[error("node {node}: support dimension {dim} exceeds the supported maximum of 3")]
    UnsupportedDimension { node: String, dim: usize },

    #[error("no-arbitrage violated at node {node}")]
    Arbitrage { node: String, witness: Vec<f64> },

    #[error("asymptotic elasticity: {0}")]
    AsymptoticElasticity(String),

    #[error("ill-posed: {0}")]
    IllPosed(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("node {node}: value slice not monotone at x = {x} (drop {drop})")]
    Monotonicity { node: String, x: f64, drop: f64 },

    #[error("node {node}: non-finite objective at x = {x}")]
    NonFinite { node: String, x: f64 },

    #[error("combinatorial budget exceeded: {needed} evaluations > {budget}")]
    Budget { needed: u128, budget: u128 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Exit code class used by the command-line front end: 1 for validation
    /// failures of the inputs, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Schema(_)
            | Error::ProbabilitySum { .. }
            | Error::LeafDepth { .. }
            | Error::Dimension { .. }
            | Error::MissingValue { .. }
            | Error::DegenerateNode(_)
            | Error::Arbitrage { .. }
            | Error::AsymptoticElasticity(_)
            | Error::IllPosed(_)
            | Error::Config(_) => 1,
            _ => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::Schema(_) => "schema",
            Error::ProbabilitySum { .. } => "probability_sum",
            Error::LeafDepth { .. } => "leaf_depth",
            Error::Dimension { .. } => "dimension",
            Error::MissingValue { .. } => "missing_value",
            Error::DegenerateNode(_) => "degenerate_node",
            Error::UnsupportedDimension { .. } => "unsupported_dimension",
            Error::Arbitrage { .. } => "arbitrage",
            Error::AsymptoticElasticity(_) => "asymptotic_elasticity",
            Error::IllPosed(_) => "ill_posed",
            Error::Unsupported(_) => "unsupported",
            Error::Config(_) => "config",
            Error::Monotonicity { .. } => "monotonicity",
            Error::NonFinite { .. } => "non_finite",
            Error::Budget { .. } => "budget",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
