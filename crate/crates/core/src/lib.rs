//! Data selection by importance resampling over hashed n-gram features.
//!
//! The pipeline fits bag-of-ngrams models for a target and a raw corpus,
//! scores every raw document by its log likelihood ratio, and draws a subset
//! without replacement with probability proportional to the weights.

pub mod artifact;
pub mod baselines;
pub mod corpus_io;
pub mod error;
pub mod featurizer;
pub mod hashing;
pub mod kl_metric;
pub mod ngram_model;
pub mod pipeline;
pub mod quality_filter;
pub mod resampler;
pub mod rng;

pub use corpus_io::{Document, Selection, SelectionManifest, SelectionMethod};
pub use error::{Error, Result};
pub use featurizer::{FeatureVector, FeaturizerConfig};
pub use ngram_model::{BagOfNgramsModel, CountAccumulator};
pub use resampler::{WeightEntry, WeightTable};
