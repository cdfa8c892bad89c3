//! Region embeddings from service-specific mobile traffic.
//!
//! The library is organized around a two-step representation pipeline:
//!
//! 1. a temporal convolutional autoencoder compresses each grid cell's
//!    multivariate traffic series into a fixed-width cell embedding
//!    ([`tcn`]), and
//! 2. a learnable aggregator (gated weighted sum or a small transformer
//!    encoder) pools the cell embeddings that fall inside each target
//!    region into a region embedding, trained with a spatial triplet
//!    loss ([`aggregator`]).
//!
//! Supporting modules cover the spatial plumbing ([`geometry`],
//! [`tessellation`]), traffic preprocessing ([`traffic`]), a synthetic
//! city generator used for testing and demos ([`synth`]), downstream
//! evaluation tasks ([`eval`]), and a file-based, stage-oriented
//! pipeline driver ([`pipeline`]).
//!
//! Everything is seeded: given the same inputs, configuration, and seed,
//! every artifact the library writes is byte-identical across runs.

pub mod aggregator;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod tcn;
pub mod tessellation;
pub mod traffic;
pub mod util;

pub use error::{Error, Result};
