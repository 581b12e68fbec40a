//! Tensor-network compilation engine for quantum dynamics.
//!
//! Builds the time-evolution propagator of a lattice Hamiltonian as a Matrix
//! Product Operator and optimizes a fixed-depth circuit of two-qubit
//! unitaries against it, beating any equal-depth Trotterization of the same
//! model. Targets 1D chains and quasi-2D qubit topologies wound onto a chain.
//!
//! Module map:
//! - [`tensor`]: dense complex tensor kernel (contract / SVD / QR / polar).
//! - [`mpo`]: MPO and doubled-MPS algebra, canonical forms, gate application,
//!   zip-up, variational compression, the Hilbert–Schmidt test cost.
//! - [`hamiltonian`]: declarative lattice models and coupling-graph winding.
//! - [`trotter`]: product-formula circuits at orders 1/2/4, layer merging,
//!   ansatz initialization, circuit-to-MPO contraction.
//! - [`target`]: convergence-checked construction of the target propagator.
//! - [`optimizer`]: the sweep optimizer with cached environment MPOs.
//! - [`dense`]: brute-force dense-matrix path for small-system verification.

pub mod dense;
pub mod error;
pub mod hamiltonian;
pub mod mpo;
pub mod optimizer;
pub mod random;
pub mod target;
pub mod tensor;
pub mod trotter;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
