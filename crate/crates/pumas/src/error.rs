use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("refinement level must be at least 1, got {0}")]
    InvalidLevel(i64),

    #[error("unknown node index {index} (node count {count})")]
    UnknownNode { index: usize, count: usize },

    #[error("quadrature mesh was built for a different grid (cells per axis {quad}, expected {grid})")]
    InconsistentQuadrature { quad: usize, grid: usize },

    #[error("obstacle must be positive on the domain boundary; found ψ = {value} at ({x}, {y})")]
    ObstacleNotPositiveOnBoundary { value: f64, x: f64, y: f64 },

    #[error("subdomain count {0} is not a perfect square")]
    NotPerfectSquare(u32),

    #[error("subdomain grid {sqrt_j}x{sqrt_j} exceeds the {n}x{n} patch grid")]
    TooManySubdomains { sqrt_j: usize, n: usize },

    #[error("two-level preconditioner needs at least 4 subdomains, got {0}")]
    NoCoarseLevel(u32),

    #[error("coarse level {coarse} must be below the fine level {fine}")]
    CoarseNotCoarser { coarse: u32, fine: u32 },

    #[error("{context}: matrix is not positive definite (pivot {pivot:.3e} at row {row})")]
    NotPositiveDefinite { context: &'static str, pivot: f64, row: usize },

    #[error("indefiniteness detected in PCG at iteration {iteration}: {quantity} = {value:.3e}")]
    Indefinite { iteration: usize, quantity: &'static str, value: f64 },

    #[error("non-finite PCG coefficient at iteration {0}")]
    NonFiniteCoefficient(usize),

    #[error("active set iteration exceeded {cap} outer iterations; last two set sizes {prev} and {last}")]
    OuterIterationCap { cap: usize, prev: usize, last: usize },

    #[error("inner solve failed to converge after {iterations} iterations (residual {residual:.3e})")]
    InnerSolveDiverged { iterations: usize, residual: f64 },

    #[error("vector length {got} does not match operator dimension {expected}")]
    DimensionMismatch { got: usize, expected: usize },

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("expression error: {0}")]
    Expr(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
