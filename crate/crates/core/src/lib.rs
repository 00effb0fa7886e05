//! Span-based anti-bias aspect representation learning.
//!
//! Aspect-level sentiment classification over span representations, with an
//! adversarial prior-sentiment discriminator, a distilled aspect-opinion
//! aligner that doubles as an unsupervised opinion extractor, and the
//! evaluation metrics for both tasks.

pub mod aligner;
pub mod antibias;
pub mod data;
pub mod encoder;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod spans;

pub use error::{Result, SarlError};
