//! Crank–Nicolson gradient-discretisation solver for the power-law Stokes
//! system driven by transport noise on the unit square, together with the
//! Monte-Carlo machinery for occupation measures and energy statistics.

pub mod assembly;
pub mod config;
pub mod constants;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod fields;
pub mod gd;
pub mod measures;
pub mod mesh;
pub mod output;
pub mod par;
pub mod quadrature;
pub mod rheology;
pub mod solver;
pub mod sparse;
pub mod validate;

pub use error::{Error, Result};
