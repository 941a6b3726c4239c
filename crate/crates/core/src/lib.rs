//! Phrase-break annotation toolkit: corpora, break markup, LLM prompting,
//! agreement metrics, a junction classifier and blinded human review.

pub mod annotation;
pub mod corpus;
pub mod digest;
pub mod error;
pub mod llm;
pub mod metrics;
pub mod pipeline;
pub mod predictor;
pub mod prompting;
pub mod review;
pub mod scalar;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::{Real, Scalar};

pub type PhrasingStatsF64 = annotation::PhrasingStats<f64>;
pub type ComparisonResultF64 = metrics::ComparisonResult<f64>;
pub type F1ReportF64 = metrics::F1Report<f64>;
/// Exact rational scalar for metric computations.
pub type ExactRatio = num_rational::Rational64;
pub type ModelF64 = predictor::Model<f64>;
pub type ModelF32 = predictor::Model<f32>;
