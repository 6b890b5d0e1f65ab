//! Smoothed empirical feature distributions and the KL-reduction diagnostic.
//! All quantities are in nats.

use crate::corpus_io::Document;
use crate::error::{Error, Result};
use crate::featurizer::{featurize, FeaturizerConfig};
use crate::ngram_model::CountAccumulator;

#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalFeatureDistribution {
    probs: Vec<f64>,
    smoothing_alpha: f64,
    sample_count: u64,
}

impl EmpiricalFeatureDistribution {
    /// Additively smoothed, normalized bucket counts.
    pub fn from_counts(counts: &[u64], smoothing_alpha: f64, sample_count: u64) -> Result<Self> {
        if !(smoothing_alpha > 0.0 && smoothing_alpha.is_finite()) {
            return Err(Error::Config(format!(
                "smoothing_alpha must be positive, got {smoothing_alpha}"
            )));
        }
        if sample_count == 0 {
            return Err(Error::Empty(
                "no documents to estimate a distribution from".into(),
            ));
        }
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::Empty("documents contain no n-grams".into()));
        }
        let norm = total as f64 + smoothing_alpha * counts.len() as f64;
        Ok(Self {
            probs: counts
                .iter()
                .map(|&c| (c as f64 + smoothing_alpha) / norm)
                .collect(),
            smoothing_alpha,
            sample_count,
        })
    }

    pub fn from_accumulator(acc: &CountAccumulator, smoothing_alpha: f64) -> Result<Self> {
        Self::from_counts(acc.counts(), smoothing_alpha, acc.documents())
    }

    /// Wraps an explicit probability vector (entries must be positive and sum to 1).
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(Error::Config("probabilities must be positive".into()));
        }
        let mass: f64 = probs.iter().sum();
        if (mass - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("probabilities sum to {mass}")));
        }
        Ok(Self {
            probs,
            smoothing_alpha: 0.0,
            sample_count: 0,
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn num_buckets(&self) -> usize {
        self.probs.len()
    }

    pub fn smoothing_alpha(&self) -> f64 {
        self.smoothing_alpha
    }

    pub fn sample_count(&self) -> u64 {
        self.sample_count
    }
}

pub fn accumulate_distribution<I>(
    docs: I,
    config: &FeaturizerConfig,
    smoothing_alpha: f64,
) -> Result<EmpiricalFeatureDistribution>
where
    I: IntoIterator<Item = Document>,
{
    config.validate()?;
    let mut acc = CountAccumulator::new(config.num_buckets as usize);
    for doc in docs {
        acc.add(&featurize(&doc.text, config));
    }
    EmpiricalFeatureDistribution::from_accumulator(&acc, smoothing_alpha)
}

fn check_buckets(p: &EmpiricalFeatureDistribution, q: &EmpiricalFeatureDistribution) -> Result<()> {
    if p.num_buckets() != q.num_buckets() {
        return Err(Error::BucketMismatch {
            left: p.num_buckets(),
            right: q.num_buckets(),
        });
    }
    Ok(())
}

/// `KL(p || q) = sum_j p_j (ln p_j - ln q_j)`, clamped at zero against rounding.
pub fn kl_divergence(
    p: &EmpiricalFeatureDistribution,
    q: &EmpiricalFeatureDistribution,
) -> Result<f64> {
    check_buckets(p, q)?;
    let kl: f64 = p
        .probs
        .iter()
        .zip(&q.probs)
        .map(|(&pj, &qj)| pj * (pj.ln() - qj.ln()))
        .sum();
    Ok(kl.max(0.0))
}

/// `KL(target || raw) - KL(target || selected)`.
pub fn kl_reduction(
    target: &EmpiricalFeatureDistribution,
    raw: &EmpiricalFeatureDistribution,
    selected: &EmpiricalFeatureDistribution,
) -> Result<f64> {
    check_buckets(target, raw)?;
    check_buckets(target, selected)?;
    Ok(kl_divergence(target, raw)? - kl_divergence(target, selected)?)
}
