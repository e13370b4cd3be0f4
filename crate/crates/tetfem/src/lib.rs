//! Tetrahedral finite element library for the mixed-boundary diffusion
//! problem: meshes, Lagrange / broken / Raviart-Thomas / Nedelec spaces,
//! conforming / interior-penalty DG / mixed solvers, and three a posteriori
//! error estimator families (residual-based, equilibrated via a curl-free
//! reconstruction, and an alternative edge-patch equilibration).

pub mod assembly;
pub mod estimators;
pub mod fem;
pub mod linalg;
pub mod mesh;
pub mod poly;
pub mod quadrature;
pub mod schemes;

/// Library-wide error type. Invariant violations carry enough context to
/// identify the offending entity.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("mesh format error: {0}")]
    MeshFormat(String),
    #[error("linear solve failed: {0}")]
    Solve(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("compatibility check failed: {0}")]
    Compatibility(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
