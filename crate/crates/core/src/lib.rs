//! Bloch band structures, Dirac-point asymptotics and interface modes of
//! two-dimensional periodic waveguides.

pub mod bands;
pub mod cell;
pub mod config;
pub mod error;
pub mod field;
pub mod greens;
pub mod index;
pub mod interface;
pub mod linalg;
pub mod mesh;
pub mod model;
pub mod perturbation;
pub mod report;
pub mod supercell;

pub use error::{Error, ErrorKind, Result};
