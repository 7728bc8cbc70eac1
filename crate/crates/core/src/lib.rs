//! Register-level sparse-state quantum simulation, with a quantum walk over a
//! CSC-stored sparse matrix and the Chebyshev-series linear solver built on it.
//!
//! The simulator only stores nonzero basis components ("branches") of a
//! multi-register state. Operations come in two flavours:
//!
//! * semi-quantum ([`semiquantum`]): reversible branch-wise maps such as
//!   arithmetic, QRAM queries, swaps and phase flips; they never change the
//!   branch count;
//! * interference ([`interference`]): Hadamard transforms and conditional
//!   rotations, which group coherent branches and may create or destroy them.
//!
//! On top of these sit the quantum binary search ([`qbs`]), the walk operator
//! ([`walk`]) and the linear solver ([`cks`]). [`oracle`] holds the dense
//! classical references every simulated quantity is checked against.

pub mod cks;
pub mod error;
pub mod exec;
pub mod interference;
pub mod matrixgen;
pub mod oracle;
pub mod qbs;
pub mod semiquantum;
pub mod state;
pub mod walk;

pub use error::{Error, Result};
pub use semiquantum::QramImage;
pub use state::{Register, ResourceStats, SparseState, ValueKind};
