//! Straggler-resilient distributed matrix multiplication with local product codes.
//!
//! The target workload is the block-outer-product form
//!
//! ```text
//!   C = A * B^T,   A split into row blocks A_1..A_mA, B into B_1..B_mB,
//!   C_ij = A_i * B_j^T
//! ```
//!
//! computed by a fleet of stateless workers that read blocks from an object
//! store, multiply, and write results back. Workers occasionally straggle, so
//! both operands are encoded with a local product code: after every `L`
//! systematic row blocks an unweighted parity block (their sum) is inserted.
//! The output grid then decomposes into independent `(L_A+1) x (L_B+1)`
//! subgrids, each a product code that a peeling decoder can repair cell by
//! cell with only `min(L_A, L_B)` block reads per isolated straggler.
//!
//! Modules:
//! - [`matrix`]: dense row-major matrices, row-block partitioning, reference
//!   kernels, matrix file formats
//! - [`code`]: code parameters, coded block layout, the encoder
//! - [`grid`]: output-grid state, the peeling decoder, result assembly,
//!   grid manifests
//! - [`matvec`]: the coded matrix-vector variant
//! - [`bounds`]: closed-form decoding-cost and undecodability bounds plus
//!   brute-force and Monte Carlo validation of them
//! - [`sim`]: a deterministic discrete-event model of the serverless
//!   workflow, coded and speculative-execution strategies
//! - [`apps`]: power iteration, kernel ridge regression, alternating least
//!   squares and tall-skinny SVD on top of pluggable execution strategies

pub mod apps;
pub mod bounds;
pub mod code;
pub mod error;
pub mod grid;
pub mod matrix;
pub mod matvec;
pub mod sim;

pub use error::{Error, Result};
