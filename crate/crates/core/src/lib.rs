pub mod classes;
pub mod cli;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod pipeline;
pub mod tensor;

pub use classes::{Domain, WeatherClass, NUM_CLASSES};
pub use error::{Error, Result};
pub use tensor::{Graph, Tensor, Var};
