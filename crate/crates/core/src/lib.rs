pub mod error;
pub mod experiments;
pub mod graphnn;
pub mod metrics;
pub mod model;
pub mod numcore;
pub mod rng;
pub mod segnet;
pub mod synthdata;
pub mod taxonomy;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
