//! Classical scattering orbits at low energy in attractive slowly decaying
//! potentials: mixed-problem solvers, the outgoing velocity field, the
//! eikonal phase, and orbit classification.

pub mod asymptotics;
pub mod eikonal;
pub mod error;
pub mod linforce;
pub mod perturbed;
pub mod potentials;
pub mod quad;
pub mod radial;
pub mod util;

pub use error::{Error, Result};
