//! Imputation of node attributes on graphs where some nodes have no observed
//! attributes at all.
//!
//! A shared GCN encoder embeds the zero-filled attribute matrix. Two
//! refinements feed the decoder: aggregation over filtered latent similarity
//! graphs ([`dca`]), and attention-fused encodings of masked adjacency powers
//! trained to rebuild the graph structure ([`hsr`]). [`train`] runs the
//! joint optimization and returns the rebuilt attributes.

pub mod autodiff;
pub mod classify;
pub mod config;
pub mod data;
pub mod dca;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod hsr;
pub mod metrics;
pub mod optim;
pub mod sparse;
pub mod split;
pub mod synthetic;
pub mod train;

pub use config::TrainConfig;
pub use error::{Result, SagaError};
