//! Continuous category discovery on feature-vector streams.
//!
//! A model pretrained on labeled classes keeps recognizing them while it
//! finds new classes in unlabeled batches. Each stage runs a growing phase,
//! where a trainable copy of the encoder clusters the samples flagged as
//! novel, and a merging phase, where the discovered clusters become stored
//! classes and the trainable copy is pulled back toward the frozen one.

pub mod checkpoint;
pub mod count;
pub mod error;
pub mod gradcheck;
pub mod grow;
pub mod kernel;
pub mod memory;
pub mod merge;
pub mod metrics;
pub mod model;
pub mod report;
pub mod runner;
pub mod scenario;

pub use error::{GmError, Result};
