//! Information-bottleneck representation learning for out-of-distribution
//! detection.
//!
//! The pipeline pre-trains a DCGAN-style generator/discriminator pair on
//! unlabeled in-distribution images, re-trains the discriminator's
//! embedding on a few labeled examples per class with a loss that repels
//! all embedded pairs while pulling samples towards learned class
//! prototypes, and scores test images by kernel density in the embedded
//! space.

pub mod data;
pub mod experiment;
mod error;
pub mod matrix;
pub mod loss;
pub mod nets;
pub mod score;
pub mod train;

pub use error::{Error, Result};
pub use matrix::Matrix;
