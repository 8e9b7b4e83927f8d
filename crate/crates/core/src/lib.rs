//! GraphiT: transformer encoders for graphs whose attention is modulated by
//! positive-definite kernels on graphs, with optional Laplacian eigenvector
//! and path-substructure node features.
//!
//! The numerical core is generic over the element type ([`Scalar`], `f32` or
//! `f64`); the aliases at the crate root fix it to `f64`, which is what the
//! tests and the reference protocols use.

pub mod autodiff;
pub mod data;
pub mod gckn;
pub mod graph;
pub mod kernels;
pub mod matrix;
pub mod model;
pub mod scalar;
pub mod spectral;
pub mod training;

pub use graph::{Graph, GraphError, Target};
pub use kernels::{KernelFamily, KernelSpec};
pub use matrix::{DenseMatrix, MatrixError};
pub use scalar::Scalar;

/// Double-precision dense matrix.
pub type Matrix = DenseMatrix<f64>;
/// Double-precision kernel matrix.
pub type Kernel = kernels::KernelMatrix<f64>;
/// Double-precision eigendecomposition.
pub type Eigen = spectral::EigenDecomposition<f64>;
/// Double-precision GraphiT model.
pub type Model = model::GraphiT<f64>;
