//! Privacy-preserving record linkage for housing and homelessness service data.
//!
//! The pipeline encodes identifying fields into keyed Bloom vectors
//! ([`encoder`]), compares every profile pair with Dice coefficients
//! ([`similarity`], [`pairgen`]), classifies pairs ([`models`], [`tuner`]),
//! groups links into latent persons ([`cluster`]) and scores the result
//! ([`evaluate`], [`usage`]).

pub mod adjudication;
pub mod cluster;
pub mod data_io;
pub mod encoder;
pub mod error;
pub mod evaluate;
pub mod models;
pub mod pairgen;
pub mod similarity;
pub mod synth;
pub mod truth;
pub mod tuner;
pub mod usage;

pub use error::{Error, Result};
