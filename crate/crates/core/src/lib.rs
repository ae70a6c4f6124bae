//! Physics-informed separable Chebyshev-KAN operator learning for steady
//! chip thermal fields.
//!
//! The crate pairs a neural operator (branch MLP + per-axis Chebyshev-KAN
//! trunks) with a finite-volume reference solver. Operator predictions are
//! scored by the residual of the discrete system and, when untrusted,
//! refined by GMRES warm-started from the prediction. A simulated-annealing
//! floorplanner sits on top.

pub mod anneal;
pub mod domain;
pub mod error;
pub mod fd;
pub mod field;
pub mod hybrid;
pub mod io;
pub mod linalg;
pub mod nn;
pub mod operator;
pub mod spectral;
pub mod training;

pub use error::{Error, Result};
