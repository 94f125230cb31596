//! Microwave control of atomic motion in spin-dependent optical lattices.
//!
//! The crate models a 1D lin-ϑ-lin lattice whose two hyperfine states feel
//! relatively displaced potentials, and the microwave-driven dynamics that
//! follow: band structure, Franck–Condon couplings, Rabi and spectroscopy
//! simulations, thermometry, sideband cooling and quantum walks.

pub mod bands;
pub mod cooling;
pub mod coupling;
pub mod dynamics;
pub mod ensembles;
pub mod error;
pub mod lattice;
pub mod linalg;
pub mod oscillator;
pub mod walk;

pub use error::{Error, Result};
pub use lattice::{LatticeConfig, PhysicalParams, PotentialSign, SpinState, SpinWeights};
