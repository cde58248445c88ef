//! Video experiment pipeline: dataset manifests, clip sampling,
//! clip-consistent transforms with annotation propagation, evaluation
//! metrics, and a config-driven training engine over built-in micro-models.

pub mod cli;
pub mod clip_sampler;
pub mod engine;
pub mod frame_io;
pub mod manifest;
pub mod metrics;
pub mod rng;
pub mod transforms;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
