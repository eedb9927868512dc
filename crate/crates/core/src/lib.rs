//! Arc fault detection with selective state-space sequence models.
//!
//! Raw current windows are reduced to their extreme values ([`fas`]),
//! lifted into a residual stream of gated selective SSM blocks ([`model`],
//! [`ssm`]) and classified into normal / arc. [`train`] provides the
//! gradients, optimizer and training loop, [`data`] the synthetic signal
//! generator and dataset files, [`metrics`] and [`bench`] evaluation.

pub mod bench;
pub mod data;
pub mod error;
pub mod fas;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod ssm;
pub mod train;

pub use error::{Error, Result};
