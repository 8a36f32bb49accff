//! Porosity-conditioned generative modeling of thin-section imagery.
//!
//! The pipeline runs segmentation -> corpus construction -> adversarial
//! training -> porosity-based validation -> well-log guided synthesis.

pub mod cgan;
pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod nn;
pub mod render;
pub mod seed;
pub mod segmentation;
pub mod stats;
pub mod training;
pub mod welllog;

pub use error::{Error, Result};
