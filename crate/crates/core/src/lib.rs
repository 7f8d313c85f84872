//! Place-recognition toolkit: pose-based pair mining, scene-graph dataset
//! splitting, global-descriptor aggregation, visual/structural fusion,
//! multi-head triplet loss with adaptive hard mining, gradient
//! verification and exact Recall@K evaluation.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases at
//! the crate root fix the scalar for common uses.

pub mod aggregate;
pub mod config;
pub mod dataset;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod io;
pub mod gradcheck;
pub mod loss;
pub mod miner;
pub mod model;
pub mod retrieval;
pub mod scalar;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Real;

pub type FeatureMapF32 = tensor::FeatureMap<f32>;
pub type FeatureMapF64 = tensor::FeatureMap<f64>;
pub type DescriptorF32 = tensor::Descriptor<f32>;
pub type DescriptorF64 = tensor::Descriptor<f64>;
pub type DescriptorDbF32 = retrieval::DescriptorDb<f32>;
pub type DescriptorDbF64 = retrieval::DescriptorDb<f64>;
pub type AggregatorF32 = aggregate::Aggregator<f32>;
pub type AggregatorF64 = aggregate::Aggregator<f64>;
pub type SampleMetaF64 = geometry::SampleMeta<f64>;
