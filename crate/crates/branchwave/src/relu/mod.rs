//! Exact ReLU network data structure and constructive calculus.

pub mod net;
pub mod ops;
pub mod product;

pub use net::{Layer, NetMetrics, NeuralNet, SparseMatrix};
