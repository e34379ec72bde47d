//! Episodic memory optimisation for meta-learning.

pub mod convlab;
pub mod error;
pub mod metaloop;
pub mod memstore;
pub mod models;
pub mod numcore;
pub mod optim;
pub mod taskgen;

pub use error::{EmoError, Result, SnapshotError};
