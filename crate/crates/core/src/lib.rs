pub mod config;
pub mod error;
pub mod landmarks;
pub mod media;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod stage1;
pub mod stage2;
pub mod synthetic;

pub use config::{load_config, TrainConfig};
pub use error::{Error, Result};
