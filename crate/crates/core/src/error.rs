use thiserror::Error;

/// Every failure surfaced by the library.
///
/// Solver failures that indicate a broken invariant (`UltramodularityViolated`,
/// `MeanMismatch`, `ClosureDiverged`, `InfeasibleEta`) are never silently
/// repaired; they propagate to the caller.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("axis {axis} has no points")]
    EmptyAxis { axis: usize },
    #[error("axis {axis}: points must be strictly increasing")]
    NonIncreasingPoints { axis: usize },
    #[error("axis {axis}: {reason}")]
    BadProbs { axis: usize, reason: String },
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("agent index {agent} out of range for a {dims}-agent grid")]
    BadAgent { agent: usize, dims: usize },
    #[error("non-finite value at profile {index}")]
    NonFiniteInput { index: usize },
    #[error("more than {cap} lower sets; use the flow-based check instead")]
    TooManyLowerSets { cap: usize },
    #[error("conditional expectation over an empty subset")]
    EmptySubset,
    #[error("{which} is not non-decreasing")]
    NotMonotone { which: &'static str },
    #[error("the first function does not majorize the second")]
    NotMajorized,
    #[error("no admissible T-transform pair after {steps} steps")]
    DecompositionStalled { steps: usize },
    #[error("linear program failed: {0}")]
    LpFailure(String),
    #[error("solver hit the sweep cap ({sweeps}) with relative decrease {last_decrease:e}")]
    NotConverged { sweeps: usize, last_decrease: f64 },
    #[error("cell {cell} is not ultramodular")]
    UltramodularityViolated { cell: usize },
    #[error("cell {cell}: mean of input {input} differs from ironed value {ironed}")]
    MeanMismatch { cell: usize, input: f64, ironed: f64 },
    #[error("partition overlay did not close within {bound} rounds")]
    ClosureDiverged { bound: usize },
    #[error("access probability for agent {agent} at profile {index} has empty feasible range [{lo}, {hi}]")]
    InfeasibleEta {
        agent: usize,
        index: usize,
        lo: f64,
        hi: f64,
    },
    #[error("dyadic level {level} exceeds the cell cap {cap}")]
    LevelTooLarge { level: u32, cap: usize },
    #[error("quadrature produced a non-finite value in cell {cell}")]
    QuadratureFailure { cell: usize },
    #[error("distributions live on different grids")]
    GridMismatch,
    #[error("{0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
