pub mod association;
pub mod embedding;
pub mod embedloss;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod io;
pub mod lap;
pub mod losscheck;
pub mod metrics;
pub mod sampling;
pub mod synth;
pub mod tracker;

pub use embedding::Embedding;
pub use error::{Error, Result};
pub use geometry::{BoundingBox, Detection};
