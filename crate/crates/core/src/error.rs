//! Shared error type for the toolkit.
//!
//! Every fallible operation in this crate reports a [`ModelError`]. Variants
//! are grouped by origin: input validation (meshes, bounds, problem specs),
//! potential-domain violations, and solver failures (Newton, linear kernel,
//! root finds, line search).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("derivative order {0} outside the supported range 0..=4")]
    InvalidOrder(u32),

    #[error("logarithmic potential evaluated outside its domain: order {order} at r = {r}")]
    DomainError { order: u32, r: f64 },

    #[error("potential kind mismatch: {0}")]
    KindMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid initial datum: {0}")]
    InvalidInitial(String),

    #[error(
        "Newton failed to converge at time step {step}: residual {residual:.3e}, {halvings} halvings in the last damped update"
    )]
    NewtonDivergence {
        step: usize,
        residual: f64,
        halvings: u32,
    },

    #[error("separation guard rejected every damped Newton step at time step {step}")]
    SeparationViolation { step: usize },

    #[error("linear solve failed: {0}")]
    LinearSolveFailure(String),

    #[error("invalid bounds: {0}")]
    InvalidBounds(String),

    #[error("root find failed: {0}")]
    RootFindFailure(String),

    #[error("subgradient selection misconfigured: {0}")]
    SubgradientConfig(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("cost increased on an accepted step at iteration {iter}: line-search bookkeeping is inconsistent")]
    NonmonotoneDecrease { iter: usize },

    #[error("full-mode vanishing-threshold estimation requires (A7): beta3 = beta4 = 0")]
    FullModeRequiresA7,
}
