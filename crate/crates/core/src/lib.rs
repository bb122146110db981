//! Interactive latent-space editing for classifiers.
//!
//! A classifier's penultimate-layer activations are projected to 2D with
//! Isomap. Users (or a scripted editor) drag points in that workspace, and the
//! network is retrained with cross-entropy plus a margin hinge that pulls each
//! moved item's latent vector toward same-label references near its new
//! position and away from other-label references near its old one.

pub mod api;
pub mod cli;
pub mod dataset;
pub mod embedding;
pub mod error;
pub mod feedback;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod session;
pub mod train;

pub use error::{Error, Result};
