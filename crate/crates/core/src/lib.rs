//! Composite snow-drought index from basin-aggregated monthly series.
//!
//! The chain is: monthly series → SPI and snow fraction → random-forest
//! feature selection → autoencoder bottleneck → mutual-information weights
//! → standardized weighted sum.

pub mod config;
pub mod encoder;
pub mod error;
pub mod featsel;
pub mod index;
pub mod io;
pub mod mi;
pub mod pipeline;
pub mod plot;
pub mod snowpart;
pub mod spi;
pub mod stats;
pub mod synth;
pub mod timeseries;

pub use error::{Error, ErrorKind, Result};
