//! Siamese sparse-pillar transformer for single-object tracking in LiDAR
//! point clouds, with training, tracking and one-pass evaluation.

pub mod config;
pub mod error;
pub mod evaluate;
pub mod geometry;
pub mod io;
pub mod localization;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod pillars;
pub mod pipeline;
pub mod selfcheck;
pub mod siamese;
pub mod synth;
pub mod tracker;
pub mod train;

pub use config::Config;
pub use error::{Result, TrackError};
pub use geometry::{ObjectState, Point};
pub use model::{BnInference, Correlation, Fusion, Network, NetworkConfig};
pub use pillars::GridSpec;
