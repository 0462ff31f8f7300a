//! Two-stage prediction of natural and diverse 3D hand gesture sequences
//! from upper-body skeleton sequences.
//!
//! Stage one maps a body sequence to an initial two-hand sequence through
//! bilateral hand branches with spatial and temporal memory banks and a
//! cross-attention backbone. Stage two diversifies that prediction with a
//! prototype memory and a Langevin-sampled latent perturbation.

pub mod autoencoder;
pub mod data;
pub mod diversify;
pub mod error;
pub mod harness;
pub mod losses;
pub mod memory;
pub mod metrics;
pub mod model;
pub mod nn;

pub use error::{Error, Result};
