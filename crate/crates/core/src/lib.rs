//! Multi-touch attribution with a causally balanced recurrent attention model.
//!
//! The pipeline: build journeys from impression logs (or generate confounded
//! synthetic ones), train the model, read per-touchpoint attention weights
//! as conversion credit, and feed them to budget replay and user
//! segmentation.

pub mod attribution;
pub mod autodiff;
pub mod baselines;
pub mod budget;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod rng;
pub mod segment;
pub mod train;

pub use error::{Error, Result};
