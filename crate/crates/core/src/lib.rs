pub mod error;
pub mod geometry;

pub use error::{Error, Result};
pub mod pointcloud;
pub mod datagen;
pub mod io;
pub mod shapes;
pub mod metrics;
pub mod autodiff;
pub mod nn;
pub mod networks;
pub mod trainer;
pub mod dataset;
pub mod checkpoint;
pub mod eval;
