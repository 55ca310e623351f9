pub mod datagen;
pub mod error;
pub mod gc;
pub mod harness;
pub mod metrics;
pub mod network;
mod vecmath;

pub use error::{Error, Result};
