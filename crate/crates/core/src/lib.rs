//! Optimal pulsed driving for mechanical quadrature squeezing in a cavity
//! optomechanical system.
//!
//! Units: the mechanical frequency is 1, so times are in 1/ωm and rates in ωm.

pub mod analysis;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod gradient;
pub mod io;
pub mod linalg;
pub mod model;
pub mod optimizer;
pub mod oracle;

pub use error::{Error, Result};
pub use model::{MeanFieldState, MomentVector, Pulse, SystemParams};
