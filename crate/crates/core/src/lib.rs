pub mod checkpoint;
pub mod config;
pub mod data;
pub mod eval;
mod error;
pub mod model;
pub mod params;
pub mod pipeline;
pub mod train;

pub use config::ModelConfig;
pub use error::{Error, Result};
pub use model::{DwsformerModel, ForwardPass};
