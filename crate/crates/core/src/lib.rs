//! Modality-specific cross-modal similarity measurement.
//!
//! Two independent semantic spaces are learned: one anchored on image region
//! sequences, one anchored on text fragment sequences. Each space runs an LSTM
//! and a feed-forward attention network over its own modality and scores the
//! other modality's global feature against the attended sequence. The two
//! resulting similarity matrices are combined by adaptive fusion and evaluated
//! with mean average precision.
//!
//! This crate is `no_std` and only needs `alloc`. File formats, manifests and
//! the command-line tool live in the `mcsm` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod attention;
pub mod data;
pub mod diagnostics;
pub mod encoders;
mod error;
pub mod fusion;
pub mod numcore;
pub mod space;
pub mod training;

pub use error::{Error, Result};
pub use numcore::{Graph, ParamId, ParamStore, Real, Tensor, Var};
