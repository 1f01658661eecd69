//! Skeleton-stream gesture recognition: temporal filtering of 2D keypoints,
//! augmented pose features, learned depth for scale normalization and hand
//! boxes, and a fusion LSTM classifier trained with staged layer unfreezing.

pub mod archive;
pub mod attention;
pub mod config;
pub mod depth;
pub mod embed;
pub mod error;
pub mod features;
pub mod filter;
pub mod gesture;
pub mod lstm;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod sequence;
pub mod synth;

pub use error::{Error, Result};
