//! Equilibrium solvers for optimal-execution and market-making games.
//!
//! The matrix, grid, Riccati and boundary-value layers are generic over the
//! floating-point scalar ([`Scalar`], implemented for `f32` and `f64`). The
//! model layers (execution game, best-quote model, approximation game,
//! verification) work in `f64`; the aliases below name the concrete types they
//! use.

// `!(x > 0.0)` guards are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acas;
pub mod approx;
pub mod error;
pub mod execution;
pub mod fbsde;
pub mod grid;
pub mod market;
pub mod matrix;
pub mod riccati;
pub mod scalar;
pub mod verify;

pub use error::{Error, Result};
pub use grid::TimeFn;
pub use scalar::Scalar;

pub type DenseMatrix = matrix::Dense<f64>;
pub type TypeSMatrix = matrix::TypeS<f64>;
pub type MatrixClassReport = matrix::MatrixClassReport<f64>;
pub type TimeGrid = grid::Grid<f64>;
pub type RiccatiProblem = riccati::RiccatiProblem<f64>;
pub type RiccatiSolution = riccati::RiccatiSolution<f64>;
pub type FbsdeProblem = fbsde::FbsdeProblem<f64>;
pub type FbsdeSolution = fbsde::FbsdeSolution<f64>;
