//! Branching Monte Carlo solvers for linear and power-nonlinear wave
//! equations in dimensions 1-3.
//!
//! The library has three layers:
//!
//! - stochastic kernels and a branching-process engine ([`kernels`],
//!   [`branching`]) plus Monte Carlo estimators of the wave solution
//!   ([`estimators`]);
//! - exact combinatorial and moment oracles that the estimators must
//!   reproduce ([`moments`]), and independent deterministic reference
//!   solvers ([`mod@reference`]);
//! - an exact ReLU-network calculus ([`relu`]) and a distiller that
//!   freezes Monte Carlo samples into a single explicit network with
//!   audited error and size bounds ([`distill`]).
//!
//! All randomness flows through per-sample counter-based streams, so
//! every result is bit-reproducible for a fixed seed regardless of the
//! worker count.

pub mod branching;
pub mod distill;
pub mod error;
pub mod estimators;
pub mod kernels;
pub mod moments;
pub mod reference;
pub mod relu;

pub use error::{Error, Result};
