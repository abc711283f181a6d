//! Simulation of the 2+1 dimensional Dirac equation on modulated square
//! waveguide lattices.
//!
//! The crate covers the whole chain: special functions for the Bessel
//! coupling factors, background geometry, the lattice design compiler,
//! coupled-mode and lattice Dirac integrators, spinor wavepackets with the
//! waveguide encoding, and the conical Aharonov-Bohm interference pipeline.

pub mod ab_pipeline;
pub mod design;
pub mod dynamics;
pub mod error;
pub mod io;
pub mod spacetime;
pub mod special_functions;
pub mod states;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
