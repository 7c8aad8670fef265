//! Simulation and Bayesian tomography of polarization / frequency-bin
//! hyperentangled photon pairs.
//!
//! The crate models the measurement chain as operators on the
//! `(2⊗2)_P ⊗ (d⊗d)_F` two-photon space, turns ground-truth states into
//! Poissonian coincidence counts, and reconstructs the state with a pCN
//! Metropolis sampler over a Hilbert–Schmidt-uniform prior.

pub mod algebra;
pub mod apparatus;
pub mod error;
pub mod metrics;
pub mod simulator;
pub mod state;
pub mod tomography;

pub use algebra::{ComplexMatrix, ComplexVector, DensityMatrix, Ket, Role, SubsystemLayout, C64};
pub use error::{Error, Result};
