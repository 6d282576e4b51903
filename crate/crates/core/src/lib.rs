//! Joint pruning and quantization of small neural networks with a
//! spike-and-slab posterior whose slab is a windowed Gaussian mixture.
//!
//! Pipeline: [`trainer::pretrain`] a full-precision [`network::Network`],
//! fit it with [`trainer::compress`], take a [`compressor::PosteriorSnapshot`]
//! and [`compressor::PosteriorSnapshot::finalize`] it into a
//! [`compressor::CompressedModel`] that [`codec::encode`] writes to disk.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod ablation;
pub mod bytes;
pub mod codec;
pub mod compressor;
pub mod config;
pub mod data;
pub mod error;
pub mod gmm;
pub mod kmeans;
pub mod metrics;
pub mod network;
pub mod objective;
pub mod optim;
pub mod oracles;
pub mod spike_slab;
pub mod task;
pub mod trainer;
pub mod variational;
pub mod verify;
pub mod window;

pub use error::{Error, Result};
