//! File formats, capture ingestion, edge streaming and the command line for
//! Wi-Fi CSI/RSSI passenger counting.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod edge;
pub mod error;
pub mod ingest;
pub mod nexmon;
pub mod packet;
pub mod pcap;
pub mod plot;
pub mod raw;
pub mod wire;

pub use error::{Error, Result};
