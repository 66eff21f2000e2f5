//! Graph-data imputation in the draft-then-refine style: structure-free and
//! graph-based drafts, a Laplacian pyramid refinement network, and numerical
//! checks of the Dirichlet-energy bounds that motivate it.
//!
//! Numeric kernels are generic over [`Scalar`] (`f32`/`f64`); the model and
//! the verifiers work in `f64` through the aliases below.

pub mod autodiff;
pub mod baselines;
pub mod energy;
pub mod error;
pub mod glpn;
pub mod graph;
pub mod linalg;
pub mod missing;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use scalar::Scalar;

/// Double-precision dense matrix, the default numeric carrier.
pub type DenseMatrix = Matrix<f64>;
/// Single-precision dense matrix.
pub type DenseMatrixF32 = Matrix<f32>;
/// Double-precision graph.
pub type Graph = graph::Graph<f64>;
/// Double-precision spectral cache.
pub type SpectralCache = graph::SpectralCache<f64>;
