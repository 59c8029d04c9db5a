//! Structure-preserving finite-volume simulation of ionic electrodiffusion in
//! an incompressible fluid.

pub mod diagnostics;
pub mod error;
pub mod field;
pub mod fluid;
pub mod grid;
pub mod linalg;
pub mod model;
pub mod nernst_planck;
pub mod orchestrator;
pub mod poisson;
pub mod verification;

pub use error::{Error, Result};
