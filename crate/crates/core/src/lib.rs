//! Desk-scale laboratory for amortized Bayesian seismic velocity-model
//! building with uncertainty quantification.
//!
//! The crate covers the full loop: synthetic earth models ([`geomodel`]),
//! acoustic modeling and extended migration ([`wavesim`]), a conditional
//! score-based diffusion model with hand-written reverse-mode gradients
//! ([`diffusion`]), posterior quality metrics ([`uqmetrics`]), the iterative
//! refinement workflow ([`aspire`]), and bit-exact artifact persistence
//! ([`store`]).

pub mod aspire;
pub mod dataset;
pub mod diffusion;
pub mod error;
pub mod field;
pub mod geomodel;
pub mod rng;
pub mod store;
pub mod uqmetrics;
pub mod wavesim;

pub use error::{Error, Result};
pub use field::{Field2, Volume3};
