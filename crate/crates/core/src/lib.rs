//! People detection and social-distancing analytics for thermal images.
//!
//! The crate is organised bottom-up:
//!
//! * [`engine`] runs the convolutional backbone (conv, batch norm, ReLU,
//!   2×2 max pooling) on channel-major tensors.
//! * [`yolo`] turns the backbone feature map into scored person boxes.
//! * [`distancing`] measures center-to-center distances in meters and
//!   colors every person green (safe) or red (too close to someone).
//! * [`thermal`] loads thermal frames and screens per-person temperature.
//! * [`eval`] scores detections against labels.
//! * [`pipeline`] ties it together for the `thermoguard` tool.

pub mod config;
pub mod distancing;
pub mod engine;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod json;
pub mod model;
pub mod pipeline;
pub mod render;
pub mod thermal;
pub mod yolo;

pub use error::{Error, Result};
