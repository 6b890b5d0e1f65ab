//! Comparison selectors: random, Pareto-thresholded heuristic classification,
//! top-k heuristic classification, and classifier-based importance weights.
//!
//! The classifier is logistic regression on the same hashed n-gram counts
//! DSIR uses, trained with plain mini-batch SGD on a class-balanced sample.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::corpus_io::{create_writer, Selection};
use crate::error::{Error, Result};
use crate::featurizer::FeatureVector;
use crate::resampler::{
    self, read_table, write_row, write_table_header, Ranked, TopK, WeightEntry,
};
use crate::rng::{self, Stream};

pub const CLASSIFIER_FORMAT_VERSION: u32 = 1;
const CLASSIFIER_MAGIC: &[u8; 8] = b"DSIRLOGR";

/// Logits are clamped to this magnitude so probabilities stay strictly inside (0, 1).
pub const MAX_LOGIT: f64 = 36.0;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    p.ln() - (-p).ln_1p()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub a: f64,
    pub b: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearClassifier {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub calibration: Option<Calibration>,
    pub featurizer_digest: String,
    pub config_digest: String,
}

#[derive(Serialize, Deserialize)]
struct ClassifierHeader {
    format_version: u32,
    num_buckets: usize,
    featurizer_digest: String,
    config_digest: String,
    calibration: Option<Calibration>,
}

impl LinearClassifier {
    pub fn zeros(num_buckets: usize) -> Self {
        Self {
            weights: vec![0.0; num_buckets],
            bias: 0.0,
            calibration: None,
            featurizer_digest: String::new(),
            config_digest: String::new(),
        }
    }

    pub fn num_buckets(&self) -> usize {
        self.weights.len()
    }

    /// `w . z + bias`, before calibration.
    pub fn decision(&self, z: &FeatureVector) -> f64 {
        self.bias
            + z.entries()
                .iter()
                .map(|&(b, c)| f64::from(c) * self.weights[b as usize])
                .sum::<f64>()
    }

    /// Calibrated, clamped logit of the target probability.
    pub fn logit(&self, z: &FeatureVector) -> f64 {
        let s = self.decision(z);
        let s = match self.calibration {
            Some(Calibration { a, b }) => a * s + b,
            None => s,
        };
        s.clamp(-MAX_LOGIT, MAX_LOGIT)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = ClassifierHeader {
            format_version: CLASSIFIER_FORMAT_VERSION,
            num_buckets: self.weights.len(),
            featurizer_digest: self.featurizer_digest.clone(),
            config_digest: self.config_digest.clone(),
            calibration: self.calibration,
        };
        let mut values = self.weights.clone();
        values.push(self.bias);
        artifact::write_file(path, CLASSIFIER_MAGIC, &header, &values)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, mut values): (ClassifierHeader, Vec<f64>) =
            artifact::read_file(path, CLASSIFIER_MAGIC, "classifier file")?;
        if header.format_version != CLASSIFIER_FORMAT_VERSION {
            return Err(Error::format(
                "classifier file",
                format!("unsupported format_version {}", header.format_version),
            ));
        }
        if values.len() != header.num_buckets + 1 {
            return Err(Error::format(
                "classifier file",
                "weight array length mismatch",
            ));
        }
        let bias = values.pop().unwrap();
        Ok(Self {
            weights: values,
            bias,
            calibration: header.calibration,
            featurizer_digest: header.featurizer_digest,
            config_digest: header.config_digest,
        })
    }
}

pub fn predict_prob(classifier: &LinearClassifier, z: &FeatureVector) -> f64 {
    sigmoid(classifier.logit(z))
}

/// `log f - log(1 - f)` for `f = predict_prob(z)`.
pub fn classifier_log_importance_weight(classifier: &LinearClassifier, z: &FeatureVector) -> f64 {
    classifier.logit(z)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub l2: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            epochs: 5,
            learning_rate: 0.05,
            batch_size: 64,
            seed: 0,
        }
    }
}

/// Logistic regression, target = 1 and raw = 0. Raw examples are subsampled
/// to the target count when there are more of them.
pub fn train_classifier(
    target_feats: &[FeatureVector],
    raw_feats: &[FeatureVector],
    num_buckets: usize,
    config: &TrainConfig,
) -> Result<LinearClassifier> {
    if target_feats.is_empty() || raw_feats.is_empty() {
        return Err(Error::Empty(
            "classifier training needs examples of both classes".into(),
        ));
    }
    if config.batch_size == 0
        || !(config.learning_rate > 0.0 && config.learning_rate.is_finite())
        || config.l2 < 0.0
    {
        return Err(Error::Config(
            "batch_size and learning_rate must be positive, l2 non-negative".into(),
        ));
    }
    let out_of_range = target_feats
        .iter()
        .chain(raw_feats)
        .filter_map(FeatureVector::max_bucket)
        .any(|b| b as usize >= num_buckets);
    if out_of_range {
        return Err(Error::Config(format!(
            "feature bucket outside [0, {num_buckets})"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut raw_idx: Vec<usize> = (0..raw_feats.len()).collect();
    if raw_feats.len() > target_feats.len() {
        raw_idx.shuffle(&mut rng);
        raw_idx.truncate(target_feats.len());
        raw_idx.sort_unstable();
    }
    let mut examples: Vec<(&FeatureVector, f64)> = target_feats
        .iter()
        .map(|z| (z, 1.0))
        .chain(raw_idx.iter().map(|&i| (&raw_feats[i], 0.0)))
        .collect();

    let mut clf = LinearClassifier::zeros(num_buckets);
    let mut grad: Vec<(u32, f64)> = Vec::new();
    for _ in 0..config.epochs {
        examples.shuffle(&mut rng);
        for batch in examples.chunks(config.batch_size) {
            grad.clear();
            let mut grad_bias = 0.0;
            for &(z, y) in batch {
                let err = sigmoid(clf.decision(z)) - y;
                grad_bias += err;
                grad.extend(z.entries().iter().map(|&(b, c)| (b, err * f64::from(c))));
            }
            let step = config.learning_rate / batch.len() as f64;
            if config.l2 > 0.0 {
                let decay = 1.0 - config.learning_rate * config.l2;
                clf.weights.iter_mut().for_each(|w| *w *= decay);
            }
            for &(b, g) in &grad {
                clf.weights[b as usize] -= step * g;
            }
            clf.bias -= step * grad_bias;
        }
    }
    Ok(clf)
}

/// Fits `(a, b)` minimizing the log-loss of `sigmoid(a * s + b)` on held-out
/// decision values `s`, by Newton's method with backtracking. The slope is
/// floored at a small positive value so calibration never reverses ranking.
pub fn platt_calibrate(
    classifier: &LinearClassifier,
    held_out: &[(FeatureVector, bool)],
) -> Result<LinearClassifier> {
    let positives = held_out.iter().filter(|(_, y)| *y).count();
    if positives == 0 || positives == held_out.len() {
        return Err(Error::Config(
            "calibration set must contain both labels".into(),
        ));
    }
    let data: Vec<(f64, f64)> = held_out
        .iter()
        .map(|(z, y)| (classifier.decision(z), if *y { 1.0 } else { 0.0 }))
        .collect();
    let (a, b) = fit_platt(&data);
    let mut out = classifier.clone();
    out.calibration = Some(Calibration { a: a.max(1e-6), b });
    Ok(out)
}

fn platt_loss(data: &[(f64, f64)], a: f64, b: f64) -> f64 {
    data.iter()
        .map(|&(s, y)| {
            let t = a * s + b;
            // log(1 + e^t) - y t, computed stably
            let softplus = if t > 0.0 {
                t + (-t).exp().ln_1p()
            } else {
                t.exp().ln_1p()
            };
            softplus - y * t
        })
        .sum()
}

fn fit_platt(data: &[(f64, f64)]) -> (f64, f64) {
    let (mut a, mut b) = (1.0, 0.0);
    let mut loss = platt_loss(data, a, b);
    for _ in 0..100 {
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(s, y) in data {
            let p = sigmoid(a * s + b);
            let d = p - y;
            let w = p * (1.0 - p);
            ga += d * s;
            gb += d;
            haa += w * s * s;
            hab += w * s;
            hbb += w;
        }
        haa += 1e-12;
        hbb += 1e-12;
        let det = haa * hbb - hab * hab;
        if det <= 0.0 || !det.is_finite() {
            break;
        }
        let da = (hbb * ga - hab * gb) / det;
        let db = (haa * gb - hab * ga) / det;
        let mut step = 1.0;
        let mut improved = false;
        while step > 1e-10 {
            let (na, nb) = (a - step * da, b - step * db);
            let nl = platt_loss(data, na, nb);
            if nl <= loss {
                a = na;
                b = nb;
                improved = loss - nl > 1e-12 * loss.abs().max(1.0);
                loss = nl;
                break;
            }
            step *= 0.5;
        }
        if !improved || (ga.abs() < 1e-9 && gb.abs() < 1e-9) {
            break;
        }
    }
    (a, b)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoConfig {
    pub shape_alpha: f64,
}

impl Default for ParetoConfig {
    fn default() -> Self {
        Self { shape_alpha: 9.0 }
    }
}

/// Lomax (Pareto II, scale 1) draw `U^(-1/alpha) - 1`, with tail
/// `P(beta > x) = (1 + x)^(-alpha)`.
pub fn pareto_noise(doc_id: &str, shape_alpha: f64, seed: u64) -> f64 {
    let u = rng::uniform_for_id(seed, doc_id, Stream::Pareto);
    u.powf(-1.0 / shape_alpha) - 1.0
}

/// Keeps each id independently iff `f > 1 - beta`. Output is sorted by id.
pub fn heuristic_select(
    scores: &[(String, f64)],
    pareto: ParetoConfig,
    seed: u64,
) -> Result<Selection> {
    if !(pareto.shape_alpha > 0.0 && pareto.shape_alpha.is_finite()) {
        return Err(Error::Config(format!(
            "Pareto shape must be positive, got {}",
            pareto.shape_alpha
        )));
    }
    let mut ids: Vec<String> = scores
        .iter()
        .filter(|(id, f)| *f > 1.0 - pareto_noise(id, pareto.shape_alpha, seed))
        .map(|(id, _)| id.clone())
        .collect();
    ids.sort();
    Ok(Selection {
        ids,
        short_pool: false,
    })
}

/// The `k` highest-scoring ids, best first, ties by id.
pub fn topk_select(scores: &[(String, f64)], k: usize) -> Selection {
    let mut top = TopK::new(k);
    for (id, f) in scores {
        top.push(Ranked {
            key: *f,
            id: id.clone(),
            payload: (),
        });
    }
    top.into_selection()
}

/// Uniform sample without replacement: Gumbel top-k over all-zero log weights.
pub fn random_select(ids: &[String], k: usize, seed: u64) -> Selection {
    let entries: Vec<WeightEntry> = ids
        .iter()
        .map(|id| WeightEntry {
            id: id.clone(),
            log_weight: 0.0,
        })
        .collect();
    resampler::select_top_k_with_seed(&entries, k, seed)
}

/// Classifier outputs `(id, f)`, written as TSV with a provenance header.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTable {
    pub scores: Vec<(String, f64)>,
    pub seed: u64,
    pub config_digest: String,
    pub model_digests: Vec<String>,
}

impl ScoreTable {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = create_writer(path)?;
        write_table_header(
            &mut w,
            "scores",
            self.seed,
            &self.config_digest,
            &self.model_digests,
        )
        .and_then(|_| writeln!(w, "id\tscore"))
        .map_err(|e| Error::io(path, e))?;
        for (id, f) in &self.scores {
            write_row(&mut w, id, *f).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let t = read_table(path, "scores", "score")?;
        if let Some((id, f)) = t.rows.iter().find(|(_, f)| !(*f > 0.0 && *f < 1.0)) {
            return Err(Error::format(
                "score table",
                format!("score {f} for {id:?} outside (0, 1)"),
            ));
        }
        Ok(Self {
            scores: t.rows,
            seed: t.seed,
            config_digest: t.config_digest,
            model_digests: t.model_digests,
        })
    }
}
