//! Hedonic price regression from tabular listing features and aerial imagery,
//! with occlusion-based explanations of what the image branch responds to.

pub mod data;
pub mod error;
pub mod explain;
pub mod models;
pub mod synth;
pub mod tensor;
pub mod tiles;
pub mod training;

pub use error::{Error, Result};
