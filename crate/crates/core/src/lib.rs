pub mod autodiff;
pub mod diagram;
pub mod error;
pub mod knowledge;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod params;
pub mod rng;
pub mod synth;
pub mod train;
pub use error::{Error, Result};
