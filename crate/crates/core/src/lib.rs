//! Self-calibrated prompt tuning for out-of-distribution detection, on a
//! desk-scale toy vision-language backbone.
//!
//! The math kernels are generic over [`numerics::Scalar`] (`f32` or `f64`);
//! the aliases below fix the scalar to `f64`, which the experiment pipeline
//! uses throughout.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod encoders;
pub mod error;
pub mod extraction;
pub mod metrics;
pub mod numerics;
pub mod scoring;
pub mod synthdata;
pub mod tuning;

pub use error::{Result, SctError};

pub type RealVec = numerics::Vector<f64>;
pub type RealMat = numerics::Matrix<f64>;
pub type ProbVec = numerics::ProbVector<f64>;
pub type FeatureMap64 = encoders::FeatureMap<f64>;
pub type Encoders64 = encoders::Encoders<f64>;
pub type PromptContext64 = tuning::PromptContext<f64>;
pub type LabeledFeatures64 = tuning::LabeledFeatures<f64>;
