//! Structured initialization of vision-transformer attention.
//!
//! Query/key weights are solved so that each head's initial attention map
//! approximates a random impulse convolution on the token grid, giving the
//! transformer a convolutional prior without changing its architecture.
//!
//! - [`conv_matrix`]: kernels and their `N × N` matrix form.
//! - [`spanned_set`]: stable rank, spanned filter sets and the ConvMixer
//!   channel-mixing oracle that explains why random impulses suffice.
//! - [`attention_init`]: the query/key solver plus default and mimetic
//!   comparators.
//! - [`fidelity`]: peak recovery, offset detection and entropy of maps.
//! - [`export`]: the `SAIW` weight container, PGM images, CSV reports.
//! - [`verify`]: parameter sweeps over the oracles.

pub mod attention_init;
pub mod conv_matrix;
pub mod error;
pub mod export;
pub mod fidelity;
pub mod linalg;
pub mod rng;
pub mod spanned_set;
pub mod verify;

pub use error::{Error, Result};
