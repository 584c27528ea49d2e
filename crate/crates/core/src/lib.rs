//! Joint span extraction and sequence labeling over a shared windowed encoder,
//! with a pairwise baseline, training, evaluation and benchmarking.

pub mod aggregation;
pub mod baseline;
pub mod bench;
pub mod data;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod loss;
pub mod model;
pub mod ner_head;
pub mod span_head;
pub mod tape;
pub mod trainer;
pub mod windowing;

pub use error::{Error, Result};
