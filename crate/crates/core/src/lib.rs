//! Numeric core of a cooperative Wi-Fi passenger counter.
//!
//! Multiple single-antenna receivers each capture CSI amplitudes and per-packet
//! RSSI. Every receiver turns its preprocessed window into compact CSI and RSSI
//! features; an edge node derives per-channel weights from the RSSI features,
//! scales and concatenates the CSI features along time, and classifies the
//! passenger count with a small CNN backbone.
//!
//! This crate is `no_std` (it needs `alloc`) and performs no IO. File formats,
//! packet capture parsing, network streaming and the command line live in the
//! `csi-fusion` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod data;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod preprocess;
pub mod rng;
pub mod synth;
pub mod train;

pub use data::{CsiFrame, CsiRecord, DatasetSplit, SampleBundle, Segment};
pub use error::{Error, Result};
pub use model::{Method, ModelConfig, Network, TrainedModel};
