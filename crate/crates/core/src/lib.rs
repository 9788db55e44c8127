//! Relative ingredient amount prediction from precomputed food embeddings.
//!
//! The crate covers the whole cascade: substitution groups and ingredient
//! distances ([`groups`]), entropic and exact optimal transport
//! ([`transport`]), dense networks with hand-derived gradients ([`nn`]),
//! the shared retrieval projection ([`retrieval`]), ingredient detection and
//! amount prediction ([`pipeline`]), and substitution-aware metrics
//! ([`metrics`]).

pub mod config;
pub mod error;
pub mod formats;
pub mod groups;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod recipe;
pub mod retrieval;
pub mod rng;
pub mod synth;
pub mod transport;

pub use error::{Error, Result};
