use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("incidence matrix has rank {rank}, expected full row rank {rows}")]
    RankDeficient { rank: usize, rows: usize },
    #[error("route {0} uses no resource")]
    EmptyRoute(usize),
    #[error("capacity of resource {index} is {value}, must be strictly positive")]
    NonpositiveCapacity { index: usize, value: f64 },
    #[error("capacities must be strictly decreasing (C[{index}] = {value} is not below its predecessor)")]
    CapacityNotDecreasing { index: usize, value: f64 },
    #[error("parent map contains a cycle through node {0}")]
    CycleDetected(usize),
    #[error("capacity ordering violated: {0}")]
    CapacityOrdering(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid incidence entry {value} at ({row}, {col}); entries must be 0 or 1")]
    InvalidEntry { row: usize, col: usize, value: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("allocation solver did not converge after {iterations} iterations (KKT residual {residual:.3e})")]
    SolverDiverged { iterations: usize, residual: f64 },
    #[error("workload lies outside the workload cone (most negative dual {min_dual:.3e})")]
    OutsideCone { min_dual: f64 },
    #[error("covariance matrix is singular")]
    SingularGamma,
    #[error("load is not stable: {0}")]
    UnstableLoad(String),
    #[error("operation requires a linear network")]
    NotLinearNetwork,
}

impl Error {
    /// Validation problems (bad inputs) as opposed to runtime failures.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::SolverDiverged { .. } | Error::UnstableLoad(_) | Error::SingularGamma
        )
    }
}
