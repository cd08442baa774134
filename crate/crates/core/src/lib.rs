//! Reducibility of the quasi-periodically forced linear wave equation on the
//! one-dimensional torus.
//!
//! The crate builds a truncated model of
//! `u_tt - u_xx + m u + eps W(omega t) u = 0`, removes the order-one part of the
//! perturbation with a pseudo-differential change of variables, and then runs a
//! KAM iteration on 2x2 operator matrices until the Hamiltonian is
//! block-diagonal and time independent. Direct simulation and measure
//! estimates for the admissible frequency sets are provided alongside.

pub mod config;
pub mod conjugate;
pub mod error;
pub mod io;
pub mod kam;
pub mod lattice;
pub mod linalg;
pub mod measure;
pub mod operators;
pub mod pipeline;
pub mod regularization;
pub mod simulate;
pub mod symbols;
pub mod wave;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
