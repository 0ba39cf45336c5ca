//! Numerical laboratory for the gravity-related (Diósi–Penrose, "DP")
//! spontaneous wave-function collapse model.
//!
//! The crate computes the catness functional and collapse rates of superposed
//! mass densities, the equilibrium collapse regime (closed form and by
//! stochastic simulation), and the response of a Cavendish pendulum to a
//! source whose Newton field emerges with a configurable lag.

pub mod cavendish;
pub mod cli;
pub mod collapse;
pub mod config;
pub mod constants;
pub mod density;
pub mod dynamics;
pub mod equilibrium;
pub mod error;
mod fft;
pub mod potential;
pub mod report;
pub mod validate;

pub use constants::PhysicalConstants;
pub use error::{Error, Result};
