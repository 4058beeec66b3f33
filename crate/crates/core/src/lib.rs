//! Satellite-to-map image translation.
//!
//! The crate is organised along the path data takes:
//!
//! * [`tilegrid`] turns a city bounding box into Web Mercator tiles, picks
//!   the least cloudy satellite scene per season, pairs satellite and map
//!   tiles and persists the result as a manifest.
//! * [`models`] holds the three generator/discriminator families: an
//!   encoder-conditioned GAN, a direct convolutional translator with a
//!   channel-concatenating discriminator, and a RealNVP flow generator.
//! * [`losses`] implements the adversarial, reconstruction and Gram-matrix
//!   style objectives.
//! * [`training`] runs alternating discriminator/generator updates with
//!   checkpointing and finite-difference gradient verification.
//! * [`eval`] computes similarity metrics, renders sample grids and hosts the
//!   MNIST sanity harness.

pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod models;
pub mod synthetic;
pub mod tilegrid;
pub mod training;

pub use autograd::Tensor;
pub use error::{Error, Result};
