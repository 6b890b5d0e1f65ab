//! Bag-of-ngrams generative models over hash buckets and the log importance
//! weights derived from a target/raw pair.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::error::{Error, Result};
use crate::featurizer::FeatureVector;

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MODEL_MAGIC: &[u8; 8] = b"DSIRBONG";

/// Dense per-bucket n-gram counts. Merging is elementwise addition, so
/// per-worker accumulators can be combined in any order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountAccumulator {
    counts: Vec<u64>,
    documents: u64,
}

impl CountAccumulator {
    pub fn new(num_buckets: usize) -> Self {
        Self {
            counts: vec![0; num_buckets],
            documents: 0,
        }
    }

    pub fn from_counts(counts: Vec<u64>, documents: u64) -> Self {
        Self { counts, documents }
    }

    pub fn add(&mut self, z: &FeatureVector) {
        for &(b, c) in z.entries() {
            self.counts[b as usize] += u64::from(c);
        }
        self.documents += 1;
    }

    pub fn merge(&mut self, other: &CountAccumulator) -> Result<()> {
        if self.counts.len() != other.counts.len() {
            return Err(Error::BucketMismatch {
                left: self.counts.len(),
                right: other.counts.len(),
            });
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.documents += other.documents;
        Ok(())
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn documents(&self) -> u64 {
        self.documents
    }

    pub fn num_buckets(&self) -> usize {
        self.counts.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BagOfNgramsModel {
    log_gamma: Vec<f64>,
    smoothing_alpha: f64,
    total_count: u64,
    featurizer_digest: String,
    config_digest: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelHeader {
    format_version: u32,
    num_buckets: usize,
    smoothing_alpha: f64,
    total_count: u64,
    featurizer_digest: String,
    config_digest: String,
}

impl BagOfNgramsModel {
    /// Additively smoothed estimate `gamma_j = (c_j + alpha) / (C + alpha * B)`,
    /// stored as natural logs.
    pub fn fit(counts: &[u64], smoothing_alpha: f64) -> Result<Self> {
        if !(smoothing_alpha > 0.0 && smoothing_alpha.is_finite()) {
            return Err(Error::Config(format!(
                "smoothing_alpha must be a positive finite number, got {smoothing_alpha}"
            )));
        }
        if counts.len() < 2 {
            return Err(Error::Config(format!(
                "num_buckets must be >= 2, got {}",
                counts.len()
            )));
        }
        let total: u64 = counts.iter().sum();
        let log_norm = (total as f64 + smoothing_alpha * counts.len() as f64).ln();
        let log_gamma = counts
            .iter()
            .map(|&c| (c as f64 + smoothing_alpha).ln() - log_norm)
            .collect();
        Ok(Self {
            log_gamma,
            smoothing_alpha,
            total_count: total,
            featurizer_digest: String::new(),
            config_digest: String::new(),
        })
    }

    pub fn fit_accumulator(acc: &CountAccumulator, smoothing_alpha: f64) -> Result<Self> {
        Self::fit(acc.counts(), smoothing_alpha)
    }

    /// Model with the given log-probabilities; used for hand-built fixtures.
    pub fn from_log_probs(log_gamma: Vec<f64>) -> Result<Self> {
        if log_gamma.len() < 2 || log_gamma.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(
                "log-probabilities must be finite with at least two buckets".into(),
            ));
        }
        let mass: f64 = log_gamma.iter().map(|v| v.exp()).sum();
        if (mass - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("probabilities sum to {mass}, not 1")));
        }
        Ok(Self {
            log_gamma,
            smoothing_alpha: 0.0,
            total_count: 0,
            featurizer_digest: String::new(),
            config_digest: String::new(),
        })
    }

    pub fn with_provenance(mut self, featurizer_digest: &str, config_digest: &str) -> Self {
        self.featurizer_digest = featurizer_digest.to_owned();
        self.config_digest = config_digest.to_owned();
        self
    }

    pub fn log_gamma(&self) -> &[f64] {
        &self.log_gamma
    }

    pub fn num_buckets(&self) -> usize {
        self.log_gamma.len()
    }

    pub fn smoothing_alpha(&self) -> f64 {
        self.smoothing_alpha
    }

    pub fn total_count(&self) -> u64 {
        self.total_count
    }

    pub fn featurizer_digest(&self) -> &str {
        &self.featurizer_digest
    }

    pub fn config_digest(&self) -> &str {
        &self.config_digest
    }

    /// `sum_j z_j * log gamma_j`. Panics if `z` has a bucket outside the model.
    pub fn log_prob(&self, z: &FeatureVector) -> f64 {
        z.entries()
            .iter()
            .map(|&(b, c)| f64::from(c) * self.log_gamma[b as usize])
            .sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        artifact::encode(MODEL_MAGIC, &self.header(), &self.log_gamma)
    }

    fn header(&self) -> ModelHeader {
        ModelHeader {
            format_version: MODEL_FORMAT_VERSION,
            num_buckets: self.log_gamma.len(),
            smoothing_alpha: self.smoothing_alpha,
            total_count: self.total_count,
            featurizer_digest: self.featurizer_digest.clone(),
            config_digest: self.config_digest.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        artifact::write_file(path, MODEL_MAGIC, &self.header(), &self.log_gamma)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, log_gamma): (ModelHeader, Vec<f64>) =
            artifact::read_file(path, MODEL_MAGIC, "model file")?;
        if header.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::format(
                "model file",
                format!("unsupported format_version {}", header.format_version),
            ));
        }
        if header.num_buckets != log_gamma.len() {
            return Err(Error::format(
                "model file",
                format!(
                    "header declares {} buckets, body has {}",
                    header.num_buckets,
                    log_gamma.len()
                ),
            ));
        }
        Ok(Self {
            log_gamma,
            smoothing_alpha: header.smoothing_alpha,
            total_count: header.total_count,
            featurizer_digest: header.featurizer_digest,
            config_digest: header.config_digest,
        })
    }
}

/// Per-bucket log-likelihood ratio `log gamma_j - log nu_j`; scoring a
/// document against it is one sparse dot product.
#[derive(Clone, Debug)]
pub struct LogRatio {
    per_bucket: Vec<f64>,
}

impl LogRatio {
    pub fn new(target: &BagOfNgramsModel, raw: &BagOfNgramsModel) -> Result<Self> {
        check_buckets(target, raw)?;
        Ok(Self {
            per_bucket: target
                .log_gamma
                .iter()
                .zip(&raw.log_gamma)
                .map(|(t, r)| t - r)
                .collect(),
        })
    }

    pub fn weight(&self, z: &FeatureVector) -> f64 {
        z.entries()
            .iter()
            .map(|&(b, c)| f64::from(c) * self.per_bucket[b as usize])
            .sum()
    }

    pub fn per_bucket(&self) -> &[f64] {
        &self.per_bucket
    }
}

fn check_buckets(target: &BagOfNgramsModel, raw: &BagOfNgramsModel) -> Result<()> {
    if target.num_buckets() != raw.num_buckets() {
        return Err(Error::BucketMismatch {
            left: target.num_buckets(),
            right: raw.num_buckets(),
        });
    }
    Ok(())
}

/// `log p_target(z) - log p_raw(z)`; zero for the empty vector.
pub fn log_importance_weight(
    target: &BagOfNgramsModel,
    raw: &BagOfNgramsModel,
    z: &FeatureVector,
) -> Result<f64> {
    check_buckets(target, raw)?;
    Ok(target.log_prob(z) - raw.log_prob(z))
}
