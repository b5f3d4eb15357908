//! Surrogate wind-flow modelling for urban layouts.
//!
//! Building footprints are rasterized ([`raster`]), paired with velocity
//! fields from a lattice-Boltzmann oracle ([`floworacle`]) and used to train
//! image-to-image networks ([`nets`], [`objectives`], [`train`]). Trained
//! generators are scored with [`eval`] and turned into pedestrian comfort
//! maps by [`comfort`].

pub mod checkpoint;
pub mod comfort;
pub mod error;
pub mod eval;
pub mod floworacle;
pub mod nets;
pub mod objectives;
pub mod predict;
pub mod raster;
pub mod render;
pub mod train;

pub use error::{Error, Result};
