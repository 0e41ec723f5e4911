//! Descriptive variational autoencoder for highway trajectory prediction.
//!
//! The encoder maps a target vehicle's observation window and its eight
//! neighbor slots to a three-dimensional latent `(a_x, lambda, ln mu)`, and a
//! fixed equation-based decoder turns that latent into a future trajectory.
//! Baselines (a learned-decoder VAE, a deterministic variant and constant
//! velocity), curve fitting, classification, validation and evaluation tools
//! share the same data layer.

pub mod cli;
pub mod config;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod latent;
pub mod learned_decoder;
pub mod losses;
pub mod models;
pub mod nn;

pub use data::{Dataset, ManeuverClass, Scenario, TimeGrid};
pub use decoder::{decode, LatentParams, Trajectory};
pub use error::{Error, Result};
