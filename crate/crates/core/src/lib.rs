//! Quality assessment for text-to-3D generated assets.
//!
//! The crate covers the whole workflow: ingesting subjective ratings and
//! turning them into MOS labels, sampling frames from orbit projection
//! videos, the three-branch predictor (shape, texture, text-image
//! alignment) with its training objective, and the correlation based
//! benchmarking protocol.

pub mod dataset;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod plots;
pub mod projection;
pub mod subjective;
pub mod synthetic;
pub mod train;

pub use dataset::{AssetRecord, Dimension, MosRecord, RatingRecord, ScoreTriple, SplitSpec};
pub use error::{Error, Result};
