//! Superpixel-bridged image reconstruction for unsupervised anomaly detection.
//!
//! An input image is mapped to a superpixel image (SI) by a memory-augmented
//! encoder-decoder, the image is reconstructed from that SI by a second
//! encoder-decoder trained to repair pasted pseudo-anomalies, and anomalies are
//! scored by the latent and pixel-space discrepancy between input and
//! reconstruction.
//!
//! Interchangeable pieces are registered by name and selected at runtime:
//! proxy builders live in [`superpixel::ProxyRegistry`] and anomaly scorers in
//! [`scoring::ScorerRegistry`].

pub mod config;
pub mod error;
pub mod experiment;
pub mod imaging;
pub mod memory;
pub mod networks;
pub mod nn;
pub mod papc;
pub mod plot;
pub mod scoring;
pub mod superpixel;
pub mod training;

pub use error::{Error, Result};
