//! End-to-end stages over sharded JSONL corpora.
//!
//! Each stage reads files, writes files, and returns a JSON-serializable
//! summary. Shards are processed in parallel on a dedicated thread pool and
//! always combined in canonical shard order; per-document randomness comes
//! from counter-based streams, so outputs do not depend on the worker count
//! or on the order in which shard paths were given.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::baselines::{
    self, platt_calibrate, predict_prob, train_classifier, LinearClassifier, ParetoConfig,
    ScoreTable, TrainConfig,
};
use crate::corpus_io::{
    self, canonical_shards, create_writer, Document, SelectionManifest, SelectionMethod,
    ShardReader,
};
use crate::error::{Error, Result};
use crate::featurizer::{featurize, FeatureVector, FeaturizerConfig};
use crate::kl_metric::{kl_divergence, kl_reduction, EmpiricalFeatureDistribution};
use crate::ngram_model::{BagOfNgramsModel, CountAccumulator, LogRatio};
use crate::quality_filter::{self, FilterCounters, QualityConfig, Verdict};
use crate::resampler::{self, write_row, write_table_header, Ranked, TopK, WeightTable};
use crate::rng::{self, Stream};

/// Environment variable that overrides the worker count.
pub const WORKERS_ENV: &str = "DSIR_WORKERS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub featurizer: FeaturizerConfig,
    pub smoothing_alpha: f64,
    pub quality: QualityConfig,
    /// Apply the quality filter to raw documents.
    pub quality_filter: bool,
    /// Also apply it to target documents.
    pub filter_target: bool,
    pub sample_cap: usize,
    pub seed: u64,
    pub workers: usize,
    pub method: SelectionMethod,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            featurizer: FeaturizerConfig::default(),
            smoothing_alpha: 1.0,
            quality: QualityConfig::default(),
            quality_filter: true,
            filter_target: false,
            sample_cap: 100_000,
            seed: 0,
            workers: 1,
            method: SelectionMethod::Dsir,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.featurizer.validate()?;
        self.quality.validate()?;
        if !(self.smoothing_alpha > 0.0 && self.smoothing_alpha.is_finite()) {
            return Err(Error::Config(format!(
                "smoothing_alpha must be positive, got {}",
                self.smoothing_alpha
            )));
        }
        if self.sample_cap == 0 {
            return Err(Error::Config("sample_cap must be positive".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be positive".into()));
        }
        Ok(())
    }

    /// Digest of every setting that shapes models and weights. The seed,
    /// worker count and selection method are recorded separately and left out.
    pub fn digest(&self) -> String {
        #[derive(Serialize)]
        struct Shaping<'a> {
            featurizer_digest: String,
            smoothing_alpha: f64,
            quality: &'a QualityConfig,
            quality_filter: bool,
            filter_target: bool,
            sample_cap: usize,
        }
        artifact::json_digest(&Shaping {
            featurizer_digest: self.featurizer.digest(),
            smoothing_alpha: self.smoothing_alpha,
            quality: &self.quality,
            quality_filter: self.quality_filter,
            filter_target: self.filter_target,
            sample_cap: self.sample_cap,
        })
    }

    fn raw_filter(&self) -> Option<&QualityConfig> {
        self.quality_filter.then_some(&self.quality)
    }

    fn target_filter(&self) -> Option<&QualityConfig> {
        (self.quality_filter && self.filter_target).then_some(&self.quality)
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", self.workers)))
    }
}

/// RFC 3339 UTC timestamp; honors `SOURCE_DATE_EPOCH` for reproducible output.
pub fn timestamp_now() -> String {
    let dt = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|secs| chrono::DateTime::from_timestamp(secs, 0))
        .unwrap_or_else(chrono::Utc::now);
    dt.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamStats {
    pub documents: u64,
    pub malformed: u64,
    pub dropped: FilterCounters,
}

impl StreamStats {
    fn merge(&mut self, other: &StreamStats) {
        self.documents += other.documents;
        self.malformed += other.malformed;
        self.dropped.merge(&other.dropped);
    }

    pub fn kept(&self) -> u64 {
        self.documents - self.dropped.dropped()
    }
}

/// Reads one shard, applying the optional quality filter.
fn for_each_doc(
    path: &Path,
    filter: Option<&QualityConfig>,
    mut f: impl FnMut(Document) -> Result<()>,
) -> Result<StreamStats> {
    let mut stats = StreamStats::default();
    let mut reader = ShardReader::open(path)?;
    for record in reader.by_ref() {
        let doc = record?.doc;
        stats.documents += 1;
        if let Some(cfg) = filter {
            if let Verdict::Fail(reason) = quality_filter::check(&doc, cfg) {
                stats.dropped.record(reason);
                continue;
            }
        }
        f(doc)?;
    }
    stats.malformed = reader.skipped();
    Ok(stats)
}

/// Uniform random sample of at most `cap` documents, keyed per document so
/// the sample is the same however the corpus is split.
pub struct FeatureSample {
    top: TopK<FeatureVector>,
    seed: u64,
    featurizer: FeaturizerConfig,
    stats: StreamStats,
}

impl FeatureSample {
    pub fn new(cap: usize, seed: u64, featurizer: &FeaturizerConfig) -> Self {
        Self {
            top: TopK::new(cap),
            seed,
            featurizer: featurizer.clone(),
            stats: StreamStats::default(),
        }
    }

    pub fn offer(&mut self, doc: Document) {
        let key = rng::uniform_for_id(self.seed, &doc.id, Stream::Sample);
        if !self.top.would_accept(key, &doc.id) {
            self.top.count_rejected();
            return;
        }
        let z = featurize(&doc.text, &self.featurizer);
        self.top.push(Ranked {
            key,
            id: doc.id,
            payload: z,
        });
    }

    pub fn merge(mut self, other: FeatureSample) -> Self {
        self.top = self.top.merge(other.top);
        self.stats.merge(&other.stats);
        self
    }

    pub fn sampled(&self) -> usize {
        self.top.len()
    }

    pub fn stats(&self) -> StreamStats {
        self.stats
    }

    pub fn accumulate(&self) -> CountAccumulator {
        let mut acc = CountAccumulator::new(self.featurizer.num_buckets as usize);
        for r in self.top.iter() {
            acc.add(&r.payload);
        }
        acc
    }

    /// Sampled `(id, features)` in sample-key order.
    pub fn into_vectors(self) -> Vec<(String, FeatureVector)> {
        self.top
            .into_sorted()
            .into_iter()
            .map(|r| (r.id, r.payload))
            .collect()
    }
}

fn sample_shards(
    paths: &[PathBuf],
    config: &PipelineConfig,
    filter: Option<&QualityConfig>,
    pool: &rayon::ThreadPool,
) -> Result<FeatureSample> {
    let shards = canonical_shards(paths)?;
    let parts: Vec<FeatureSample> = pool.install(|| {
        shards
            .par_iter()
            .map(|path| {
                let mut sample =
                    FeatureSample::new(config.sample_cap, config.seed, &config.featurizer);
                let stats = for_each_doc(path, filter, |doc| {
                    sample.offer(doc);
                    Ok(())
                })?;
                sample.stats = stats;
                Ok(sample)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(parts.into_iter().fold(
        FeatureSample::new(config.sample_cap, config.seed, &config.featurizer),
        FeatureSample::merge,
    ))
}

#[derive(Clone, Debug, Serialize)]
pub struct SideSummary {
    #[serde(flatten)]
    pub stats: StreamStats,
    pub sampled: u64,
    pub ngrams: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FitSummary {
    pub stage: &'static str,
    pub config_digest: String,
    pub featurizer_digest: String,
    pub target: SideSummary,
    pub raw: SideSummary,
    pub target_model_digest: String,
    pub raw_model_digest: String,
}

/// Fits both bag-of-ngrams models from capped samples of in-memory documents.
/// The raw side is quality-filtered according to `config`.
pub fn fit_models<R, T>(
    raw: R,
    target: T,
    config: &PipelineConfig,
) -> Result<(BagOfNgramsModel, BagOfNgramsModel)>
where
    R: IntoIterator<Item = Document>,
    T: IntoIterator<Item = Document>,
{
    config.validate()?;
    let fit_side =
        |docs: &mut dyn Iterator<Item = Document>, filter: Option<&QualityConfig>, side: &str| {
            let mut sample = FeatureSample::new(config.sample_cap, config.seed, &config.featurizer);
            for doc in docs {
                if filter.is_some_and(|q| !quality_filter::check(&doc, q).is_pass()) {
                    continue;
                }
                sample.offer(doc);
            }
            model_from_sample(&sample, config, side)
        };
    let target_model = fit_side(&mut target.into_iter(), config.target_filter(), "target")?;
    let raw_model = fit_side(&mut raw.into_iter(), config.raw_filter(), "raw")?;
    Ok((target_model, raw_model))
}

fn model_from_sample(
    sample: &FeatureSample,
    config: &PipelineConfig,
    side: &str,
) -> Result<BagOfNgramsModel> {
    if sample.sampled() == 0 {
        return Err(Error::Empty(format!(
            "no {side} documents left after filtering"
        )));
    }
    Ok(
        BagOfNgramsModel::fit_accumulator(&sample.accumulate(), config.smoothing_alpha)?
            .with_provenance(&config.featurizer.digest(), &config.digest()),
    )
}

pub fn cmd_fit(
    raw_paths: &[PathBuf],
    target_paths: &[PathBuf],
    config: &PipelineConfig,
    target_out: &Path,
    raw_out: &Path,
) -> Result<FitSummary> {
    config.validate()?;
    let pool = config.pool()?;
    let target = sample_shards(target_paths, config, config.target_filter(), &pool)?;
    let raw = sample_shards(raw_paths, config, config.raw_filter(), &pool)?;
    let target_model = model_from_sample(&target, config, "target")?;
    let raw_model = model_from_sample(&raw, config, "raw")?;
    target_model.save(target_out)?;
    raw_model.save(raw_out)?;
    let side = |s: &FeatureSample, m: &BagOfNgramsModel| SideSummary {
        stats: s.stats(),
        sampled: s.sampled() as u64,
        ngrams: m.total_count(),
    };
    Ok(FitSummary {
        stage: "fit",
        config_digest: config.digest(),
        featurizer_digest: config.featurizer.digest(),
        target: side(&target, &target_model),
        raw: side(&raw, &raw_model),
        target_model_digest: artifact::file_digest(target_out)?,
        raw_model_digest: artifact::file_digest(raw_out)?,
    })
}

fn check_digest(what: &str, expected: &str, found: &str) -> Result<()> {
    if expected != found {
        return Err(Error::DigestMismatch {
            what: what.to_owned(),
            expected: expected.to_owned(),
            found: found.to_owned(),
        });
    }
    Ok(())
}

/// Log importance weights of in-memory documents, in input order.
pub fn score_documents<'a, I>(
    docs: I,
    ratio: &'a LogRatio,
    featurizer: &'a FeaturizerConfig,
) -> impl Iterator<Item = (String, f64)> + 'a
where
    I: IntoIterator<Item = Document>,
    I::IntoIter: 'a,
{
    docs.into_iter().map(move |doc| {
        let w = ratio.weight(&featurize(&doc.text, featurizer));
        (doc.id, w)
    })
}

/// One TSV output of a parallel scoring pass.
struct TsvOutput<'a> {
    path: &'a Path,
    kind: &'static str,
    column: &'static str,
    seed: u64,
    config_digest: String,
    model_digests: Vec<String>,
}

/// Scores every document of every shard in parallel. Each shard writes its
/// rows to private temporary files, which are concatenated in canonical
/// shard order behind one header per output.
fn score_shards_to_tsv<F>(
    paths: &[PathBuf],
    filter: Option<&QualityConfig>,
    pool: &rayon::ThreadPool,
    outputs: &[TsvOutput<'_>],
    score: F,
) -> Result<(StreamStats, u64)>
where
    F: Fn(&Document) -> Vec<f64> + Sync,
{
    let shards = canonical_shards(paths)?;
    let parent = outputs[0]
        .path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let scratch = tempfile::Builder::new()
        .prefix(".dsir-scratch")
        .tempdir_in(parent)
        .map_err(|e| Error::io(parent, e))?;
    let part_path = |shard: usize, out: usize| scratch.path().join(format!("{shard}.{out}.part"));

    let per_shard: Vec<(StreamStats, u64)> = pool.install(|| {
        shards
            .par_iter()
            .enumerate()
            .map(|(si, path)| {
                let mut writers = (0..outputs.len())
                    .map(|oi| create_writer(&part_path(si, oi)))
                    .collect::<Result<Vec<_>>>()?;
                let mut rows = 0u64;
                let stats = for_each_doc(path, filter, |doc| {
                    let values = score(&doc);
                    for (oi, w) in writers.iter_mut().enumerate() {
                        write_row(w, &doc.id, values[oi])
                            .map_err(|e| Error::io(part_path(si, oi), e))?;
                    }
                    rows += 1;
                    Ok(())
                })?;
                for (oi, mut w) in writers.into_iter().enumerate() {
                    w.flush().map_err(|e| Error::io(part_path(si, oi), e))?;
                }
                Ok((stats, rows))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    for (oi, out) in outputs.iter().enumerate() {
        let mut w = create_writer(out.path)?;
        write_table_header(
            &mut w,
            out.kind,
            out.seed,
            &out.config_digest,
            &out.model_digests,
        )
        .and_then(|_| writeln!(w, "id\t{}", out.column))
        .map_err(|e| Error::io(out.path, e))?;
        for si in 0..shards.len() {
            let part = part_path(si, oi);
            let mut f = File::open(&part).map_err(|e| Error::io(&part, e))?;
            io::copy(&mut f, &mut w).map_err(|e| Error::io(out.path, e))?;
        }
        w.flush().map_err(|e| Error::io(out.path, e))?;
    }

    let mut stats = StreamStats::default();
    let mut rows = 0;
    for (s, r) in per_shard {
        stats.merge(&s);
        rows += r;
    }
    Ok((stats, rows))
}

#[derive(Clone, Debug, Serialize)]
pub struct WeightsSummary {
    pub stage: &'static str,
    pub config_digest: String,
    #[serde(flatten)]
    pub stats: StreamStats,
    pub rows: u64,
}

pub fn cmd_weights(
    raw_paths: &[PathBuf],
    target_model_path: &Path,
    raw_model_path: &Path,
    config: &PipelineConfig,
    out: &Path,
) -> Result<WeightsSummary> {
    config.validate()?;
    let target = BagOfNgramsModel::load(target_model_path)?;
    let raw = BagOfNgramsModel::load(raw_model_path)?;
    let featurizer_digest = config.featurizer.digest();
    let config_digest = config.digest();
    for (name, m) in [("target model", &target), ("raw model", &raw)] {
        check_digest(
            &format!("{name} featurizer"),
            &featurizer_digest,
            m.featurizer_digest(),
        )?;
        check_digest(&format!("{name} config"), &config_digest, m.config_digest())?;
    }
    let ratio = LogRatio::new(&target, &raw)?;
    let outputs = [TsvOutput {
        path: out,
        kind: "weights",
        column: "log_weight",
        seed: config.seed,
        config_digest: config_digest.clone(),
        model_digests: vec![
            artifact::file_digest(target_model_path)?,
            artifact::file_digest(raw_model_path)?,
        ],
    }];
    let pool = config.pool()?;
    let (stats, rows) =
        score_shards_to_tsv(raw_paths, config.raw_filter(), &pool, &outputs, |doc| {
            vec![ratio.weight(&featurize(&doc.text, &config.featurizer))]
        })?;
    Ok(WeightsSummary {
        stage: "weights",
        config_digest,
        stats,
        rows,
    })
}

#[derive(Clone, Debug)]
pub struct SelectOptions {
    pub k: usize,
    /// Overrides the seed recorded in the input table.
    pub seed: Option<u64>,
    pub method: SelectionMethod,
    pub pareto: ParetoConfig,
    pub created_at: String,
}

/// Dispatches to the resampler (`dsir`, `classifier_ir`, `random`, reading a
/// weight table) or to the classifier baselines (`heuristic`,
/// `topk_heuristic`, reading a score table), then writes the manifest.
pub fn cmd_select(input: &Path, options: &SelectOptions, out: &Path) -> Result<SelectionManifest> {
    let manifest = match options.method {
        SelectionMethod::Dsir | SelectionMethod::ClassifierIr | SelectionMethod::Random => {
            let table = WeightTable::read(input)?;
            let seed = options.seed.unwrap_or(table.seed);
            let selection = if options.method == SelectionMethod::Random {
                let ids: Vec<String> = table.entries.iter().map(|e| e.id.clone()).collect();
                baselines::random_select(&ids, options.k, seed)
            } else {
                resampler::select_top_k_with_seed(&table.entries, options.k, seed)
            };
            let mut m = SelectionManifest::from_selection(
                selection,
                options.k as u64,
                seed,
                options.method,
                table.config_digest,
                options.created_at.clone(),
            );
            m.model_digests = table.model_digests;
            m
        }
        SelectionMethod::Heuristic | SelectionMethod::TopkHeuristic => {
            let table = ScoreTable::read(input)?;
            let seed = options.seed.unwrap_or(table.seed);
            let (selection, k) = if options.method == SelectionMethod::Heuristic {
                let s = baselines::heuristic_select(&table.scores, options.pareto, seed)?;
                let k = s.ids.len() as u64;
                (s, k)
            } else {
                (
                    baselines::topk_select(&table.scores, options.k),
                    options.k as u64,
                )
            };
            let mut m = SelectionManifest::from_selection(
                selection,
                k,
                seed,
                options.method,
                table.config_digest,
                options.created_at.clone(),
            );
            m.model_digests = table.model_digests;
            m
        }
    };
    corpus_io::write_manifest(&manifest, out)?;
    Ok(manifest)
}

#[derive(Clone, Debug, Serialize)]
pub struct ExtractSummary {
    pub stage: &'static str,
    pub written: u64,
}

pub fn cmd_extract(
    raw_paths: &[PathBuf],
    manifest_path: &Path,
    out: &Path,
) -> Result<ExtractSummary> {
    let manifest = corpus_io::read_manifest(manifest_path)?;
    let shards = canonical_shards(raw_paths)?;
    let written = corpus_io::extract_subset(&shards, &manifest, out)?;
    Ok(ExtractSummary {
        stage: "extract",
        written,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KlRow {
    pub target: String,
    pub selected: String,
    pub kl_target_raw: f64,
    pub kl_target_selected: f64,
    pub kl_reduction: f64,
}

fn label(paths: &[PathBuf]) -> String {
    paths
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join("+")
}

fn estimate_distribution(
    paths: &[PathBuf],
    config: &PipelineConfig,
    pool: &rayon::ThreadPool,
) -> Result<EmpiricalFeatureDistribution> {
    let sample = sample_shards(paths, config, None, pool)?;
    if sample.sampled() == 0 {
        return Err(Error::Empty(format!("no documents in {}", label(paths))));
    }
    EmpiricalFeatureDistribution::from_accumulator(&sample.accumulate(), config.smoothing_alpha)
}

/// One row per selected dataset. Each distribution is estimated from a capped
/// sample without quality filtering.
pub fn cmd_kl_report(
    target_paths: &[PathBuf],
    raw_paths: &[PathBuf],
    selected: &[Vec<PathBuf>],
    config: &PipelineConfig,
) -> Result<Vec<KlRow>> {
    config.validate()?;
    let pool = config.pool()?;
    let target = estimate_distribution(target_paths, config, &pool)?;
    let raw = estimate_distribution(raw_paths, config, &pool)?;
    let kl_target_raw = kl_divergence(&target, &raw)?;
    selected
        .iter()
        .map(|paths| {
            let sel = estimate_distribution(paths, config, &pool)?;
            Ok(KlRow {
                target: label(target_paths),
                selected: label(paths),
                kl_target_raw,
                kl_target_selected: kl_divergence(&target, &sel)?,
                kl_reduction: kl_reduction(&target, &raw, &sel)?,
            })
        })
        .collect()
}

pub fn write_kl_csv<W: Write>(rows: &[KlRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)
            .map_err(|e| Error::format("kl report", e))?;
    }
    w.flush().map_err(|e| Error::io("kl report", e))
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainSummary {
    pub stage: &'static str,
    pub target_examples: u64,
    pub raw_examples: u64,
    pub held_out: u64,
    pub calibration: Option<baselines::Calibration>,
    pub classifier_digest: String,
}

/// Trains the n-gram logistic classifier on capped samples. With
/// `calibrate_frac > 0`, that fraction of each side (chosen per document id)
/// is held out for Platt calibration.
pub fn cmd_train_classifier(
    raw_paths: &[PathBuf],
    target_paths: &[PathBuf],
    config: &PipelineConfig,
    train: &TrainConfig,
    calibrate_frac: f64,
    out: &Path,
) -> Result<TrainSummary> {
    config.validate()?;
    if !(0.0..1.0).contains(&calibrate_frac) {
        return Err(Error::Config(format!(
            "calibration fraction must be in [0, 1), got {calibrate_frac}"
        )));
    }
    let pool = config.pool()?;
    let target = sample_shards(target_paths, config, config.target_filter(), &pool)?.into_vectors();
    let raw = sample_shards(raw_paths, config, config.raw_filter(), &pool)?.into_vectors();

    let split = |v: Vec<(String, FeatureVector)>| {
        let (mut fit, mut held) = (Vec::new(), Vec::new());
        for (id, z) in v {
            if calibrate_frac > 0.0
                && rng::uniform_for_id(config.seed, &id, Stream::Pareto) < calibrate_frac
            {
                held.push(z);
            } else {
                fit.push(z);
            }
        }
        (fit, held)
    };
    let (target_fit, target_held) = split(target);
    let (raw_fit, raw_held) = split(raw);

    let num_buckets = config.featurizer.num_buckets as usize;
    let mut clf = train_classifier(&target_fit, &raw_fit, num_buckets, train)?;
    let held_out = (target_held.len() + raw_held.len()) as u64;
    if calibrate_frac > 0.0 {
        let labeled: Vec<(FeatureVector, bool)> = target_held
            .into_iter()
            .map(|z| (z, true))
            .chain(raw_held.into_iter().map(|z| (z, false)))
            .collect();
        clf = platt_calibrate(&clf, &labeled)?;
    }
    clf.featurizer_digest = config.featurizer.digest();
    clf.config_digest = config.digest();
    clf.save(out)?;
    Ok(TrainSummary {
        stage: "train-classifier",
        target_examples: target_fit.len() as u64,
        raw_examples: raw_fit.len() as u64,
        held_out,
        calibration: clf.calibration,
        classifier_digest: artifact::file_digest(out)?,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ScoreSummary {
    pub stage: &'static str,
    #[serde(flatten)]
    pub stats: StreamStats,
    pub rows: u64,
}

/// Writes classifier probabilities (for `heuristic` / `topk_heuristic`)
/// and/or classifier log importance weights (for `classifier_ir`).
pub fn cmd_score(
    raw_paths: &[PathBuf],
    classifier_path: &Path,
    config: &PipelineConfig,
    scores_out: Option<&Path>,
    weights_out: Option<&Path>,
) -> Result<ScoreSummary> {
    config.validate()?;
    let clf = LinearClassifier::load(classifier_path)?;
    check_digest(
        "classifier featurizer",
        &config.featurizer.digest(),
        &clf.featurizer_digest,
    )?;
    check_digest("classifier config", &config.digest(), &clf.config_digest)?;
    if clf.num_buckets() != config.featurizer.num_buckets as usize {
        return Err(Error::BucketMismatch {
            left: clf.num_buckets(),
            right: config.featurizer.num_buckets as usize,
        });
    }
    let model_digests = vec![artifact::file_digest(classifier_path)?];
    let mut outputs = Vec::new();
    let mut want_scores = false;
    if let Some(path) = scores_out {
        want_scores = true;
        outputs.push(TsvOutput {
            path,
            kind: "scores",
            column: "score",
            seed: config.seed,
            config_digest: config.digest(),
            model_digests: model_digests.clone(),
        });
    }
    if let Some(path) = weights_out {
        outputs.push(TsvOutput {
            path,
            kind: "weights",
            column: "log_weight",
            seed: config.seed,
            config_digest: config.digest(),
            model_digests,
        });
    }
    if outputs.is_empty() {
        return Err(Error::Config(
            "score needs a scores or weights output".into(),
        ));
    }
    let want_weights = weights_out.is_some();
    let pool = config.pool()?;
    let (stats, rows) =
        score_shards_to_tsv(raw_paths, config.raw_filter(), &pool, &outputs, |doc| {
            let z = featurize(&doc.text, &config.featurizer);
            let mut v = Vec::with_capacity(2);
            if want_scores {
                v.push(predict_prob(&clf, &z));
            }
            if want_weights {
                v.push(baselines::classifier_log_importance_weight(&clf, &z));
            }
            v
        })?;
    Ok(ScoreSummary {
        stage: "score",
        stats,
        rows,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct FilterSummary {
    pub stage: &'static str,
    #[serde(flatten)]
    pub stats: StreamStats,
    pub kept: u64,
}

/// Copies passing documents' original lines to `out`; optionally logs drops
/// as JSONL `{id, reason}`.
pub fn cmd_filter(
    paths: &[PathBuf],
    quality: &QualityConfig,
    out: &Path,
    drop_log: Option<&Path>,
) -> Result<FilterSummary> {
    #[derive(Serialize)]
    struct Drop<'a> {
        id: &'a str,
        reason: quality_filter::FailReason,
    }
    quality.validate()?;
    let mut w = create_writer(out)?;
    let mut log: Option<BufWriter<File>> = drop_log.map(create_writer).transpose()?;
    let mut stats = StreamStats::default();
    for path in canonical_shards(paths)? {
        let mut reader = ShardReader::open(&path)?;
        for record in reader.by_ref() {
            let record = record?;
            stats.documents += 1;
            match quality_filter::check(&record.doc, quality) {
                Verdict::Pass => writeln!(w, "{}", record.line).map_err(|e| Error::io(out, e))?,
                Verdict::Fail(reason) => {
                    stats.dropped.record(reason);
                    if let (Some(log), Some(log_path)) = (log.as_mut(), drop_log) {
                        serde_json::to_writer(
                            &mut *log,
                            &Drop {
                                id: &record.doc.id,
                                reason,
                            },
                        )
                        .map_err(|e| Error::format("drop log", e))?;
                        writeln!(log).map_err(|e| Error::io(log_path, e))?;
                    }
                }
            }
        }
        stats.malformed += reader.skipped();
    }
    w.flush().map_err(|e| Error::io(out, e))?;
    if let (Some(mut log), Some(log_path)) = (log, drop_log) {
        log.flush().map_err(|e| Error::io(log_path, e))?;
    }
    Ok(FilterSummary {
        stage: "filter",
        kept: stats.kept(),
        stats,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct RunAllSummary {
    pub fit: FitSummary,
    pub weights: WeightsSummary,
    pub selected: u64,
    pub short_pool: bool,
    pub extract: ExtractSummary,
}

/// fit, weights, select (DSIR) and extract, with artifacts in `work_dir`:
/// `target.model`, `raw.model`, `weights.tsv`, `manifest.json`, `selected.jsonl`.
pub fn run_all(
    raw_paths: &[PathBuf],
    target_paths: &[PathBuf],
    config: &PipelineConfig,
    k: usize,
    created_at: &str,
    work_dir: &Path,
) -> Result<RunAllSummary> {
    std::fs::create_dir_all(work_dir).map_err(|e| Error::io(work_dir, e))?;
    let target_model = work_dir.join("target.model");
    let raw_model = work_dir.join("raw.model");
    let weights = work_dir.join("weights.tsv");
    let manifest = work_dir.join("manifest.json");
    let selected = work_dir.join("selected.jsonl");

    let fit = cmd_fit(raw_paths, target_paths, config, &target_model, &raw_model)?;
    let weights_summary = cmd_weights(raw_paths, &target_model, &raw_model, config, &weights)?;
    let m = cmd_select(
        &weights,
        &SelectOptions {
            k,
            seed: Some(config.seed),
            method: SelectionMethod::Dsir,
            pareto: ParetoConfig::default(),
            created_at: created_at.to_owned(),
        },
        &manifest,
    )?;
    let extract = cmd_extract(raw_paths, &manifest, &selected)?;
    Ok(RunAllSummary {
        fit,
        weights: weights_summary,
        selected: m.selected_ids.len() as u64,
        short_pool: m.short_pool,
        extract,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_ignores_runtime_settings() {
        let a = PipelineConfig::default();
        let b = PipelineConfig {
            workers: 8,
            seed: 99,
            method: SelectionMethod::Random,
            ..a.clone()
        };
        assert_eq!(a.digest(), b.digest());
        let c = PipelineConfig {
            smoothing_alpha: 0.5,
            ..a.clone()
        };
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn validation() {
        assert!(PipelineConfig::default().validate().is_ok());
        for bad in [
            PipelineConfig {
                smoothing_alpha: 0.0,
                ..Default::default()
            },
            PipelineConfig {
                sample_cap: 0,
                ..Default::default()
            },
            PipelineConfig {
                workers: 0,
                ..Default::default()
            },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn timestamp_is_rfc3339() {
        let t = timestamp_now();
        assert!(chrono::DateTime::parse_from_rfc3339(&t).is_ok(), "{t}");
    }

    #[test]
    fn sample_is_split_invariant() {
        let cfg = FeaturizerConfig::with_buckets(64);
        let docs: Vec<Document> = (0..200)
            .map(|i| Document::new("s", i, format!("w{} w{}", i % 17, i % 5)))
            .collect();
        let mut whole = FeatureSample::new(30, 5, &cfg);
        docs.iter().cloned().for_each(|d| whole.offer(d));
        let mut left = FeatureSample::new(30, 5, &cfg);
        let mut right = FeatureSample::new(30, 5, &cfg);
        for d in docs {
            if d.ordinal % 3 == 0 {
                left.offer(d)
            } else {
                right.offer(d)
            }
        }
        let merged = right.merge(left);
        assert_eq!(merged.accumulate(), whole.accumulate());
        assert_eq!(merged.sampled(), 30);
    }
}
