//! Matrix-free LOBPCG eigensolver for symmetric generalized eigenproblems.
//!
//! * [`multivec`]: dense multivectors and the small dense kernels (Gram
//!   products, Cholesky, Jacobi eigensolver).
//! * [`operators`]: operator and preconditioner traits, the 7-point 3D
//!   Laplacian, Jacobi and inner-PCG preconditioners.
//! * [`lobpcg`]: the block solver with hard and soft locking.
//! * [`problems`]: analytic and dense reference spectra.
//! * [`cli`]: the benchmark driver behind the `lobpcg` binary.

pub mod cli;
pub mod error;
pub mod lobpcg;
pub mod multivec;
pub mod operators;
pub mod problems;

pub use error::{Error, Result};
pub use lobpcg::{
    apply_constraints, b_orthonormalize, solve, solve_staged, Constraints, ConvergenceMode,
    SolverConfig, SolverReport, SolverStatus,
};
pub use multivec::{DiagonalSpectrum, MultiVector, SmallMatrix};
pub use operators::{Grid3D, LinearOperator, Preconditioner};
