//! Manufactured-solution workbench over the tetfem library: exact error
//! measures, Prager-Synge decomposition checks, convergence and effectivity
//! studies with CSV/VTK output, and the command-line front end.

pub mod cli;
pub mod errors;
pub mod manufactured;
pub mod ps;
pub mod study;
pub mod vtk;

pub use tetfem::{Error, Result};
