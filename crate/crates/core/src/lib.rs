//! Structural recurrent networks (SRNN-MaxNode, SRNN-MaxEdge) and a
//! hierarchical LSTM baseline for joint person-action and group-activity
//! recognition from multi-person box tracks.
//!
//! Everything runs on a small define-by-run autodiff engine in [`tensor`].

pub mod config;
pub mod data;
pub mod error;
pub mod geometry;
pub mod lstm;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
