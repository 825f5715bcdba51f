pub mod error;
pub mod noise;
pub mod score;
pub mod smoothing;

pub use error::{Error, Result};
pub mod losses;
pub mod calibration;
pub mod data;
pub mod metrics;
pub mod model;
pub mod train;
