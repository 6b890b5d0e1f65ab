//! Word-level filter for extremely short and repetitive documents.
//!
//! Words are the featurizer's tokens (whitespace split, outer punctuation
//! stripped, lowercased). Checks run in a fixed order and the first failure
//! is reported.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus_io::Document;
use crate::error::{Error, Result};
use crate::featurizer::{tokenize, FeaturizerConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityConfig {
    pub min_words: usize,
    pub max_top_token_frac: f64,
    pub min_distinct_frac: f64,
}

impl Default for QualityConfig {
    fn default() -> Self {
        Self {
            min_words: 40,
            max_top_token_frac: 0.2,
            min_distinct_frac: 0.3,
        }
    }
}

impl QualityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_top_token_frac > 0.0 && self.max_top_token_frac <= 1.0) {
            return Err(Error::Config(format!(
                "max_top_token_frac must be in (0, 1], got {}",
                self.max_top_token_frac
            )));
        }
        if !(0.0..=1.0).contains(&self.min_distinct_frac) {
            return Err(Error::Config(format!(
                "min_distinct_frac must be in [0, 1], got {}",
                self.min_distinct_frac
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailReason {
    TooShort,
    RepetitiveTopToken,
    RepetitiveLowDiversity,
}

impl FailReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            FailReason::TooShort => "too_short",
            FailReason::RepetitiveTopToken => "repetitive_top_token",
            FailReason::RepetitiveLowDiversity => "repetitive_low_diversity",
        }
    }
}

impl fmt::Display for FailReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail(FailReason),
}

impl Verdict {
    pub fn is_pass(&self) -> bool {
        matches!(self, Verdict::Pass)
    }
}

pub fn check_text(text: &str, config: &QualityConfig) -> Verdict {
    let words = tokenize(text, &FeaturizerConfig::default());
    let n = words.len();
    if n < config.min_words || n == 0 {
        return Verdict::Fail(FailReason::TooShort);
    }
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for w in &words {
        *freq.entry(w.as_str()).or_default() += 1;
    }
    let top = freq.values().copied().max().unwrap_or(0);
    if top as f64 / n as f64 > config.max_top_token_frac {
        return Verdict::Fail(FailReason::RepetitiveTopToken);
    }
    if (freq.len() as f64 / n as f64) < config.min_distinct_frac {
        return Verdict::Fail(FailReason::RepetitiveLowDiversity);
    }
    Verdict::Pass
}

pub fn check(doc: &Document, config: &QualityConfig) -> Verdict {
    check_text(&doc.text, config)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterCounters {
    pub too_short: u64,
    pub repetitive_top_token: u64,
    pub repetitive_low_diversity: u64,
}

impl FilterCounters {
    pub fn record(&mut self, reason: FailReason) {
        match reason {
            FailReason::TooShort => self.too_short += 1,
            FailReason::RepetitiveTopToken => self.repetitive_top_token += 1,
            FailReason::RepetitiveLowDiversity => self.repetitive_low_diversity += 1,
        }
    }

    pub fn dropped(&self) -> u64 {
        self.too_short + self.repetitive_top_token + self.repetitive_low_diversity
    }

    pub fn merge(&mut self, other: &FilterCounters) {
        self.too_short += other.too_short;
        self.repetitive_top_token += other.repetitive_top_token;
        self.repetitive_low_diversity += other.repetitive_low_diversity;
    }
}

type DropHook<'a> = Box<dyn FnMut(&Document, FailReason) + 'a>;

/// Order-preserving filter over a document stream. Rejected documents are
/// counted and, if a hook is installed, reported to it.
pub struct FilterStream<'a, I> {
    inner: I,
    config: QualityConfig,
    counters: FilterCounters,
    on_drop: Option<DropHook<'a>>,
}

impl<'a, I> FilterStream<'a, I> {
    pub fn counters(&self) -> FilterCounters {
        self.counters
    }

    pub fn on_drop(mut self, hook: impl FnMut(&Document, FailReason) + 'a) -> Self {
        self.on_drop = Some(Box::new(hook));
        self
    }
}

impl<I: Iterator<Item = Document>> Iterator for FilterStream<'_, I> {
    type Item = Document;

    fn next(&mut self) -> Option<Document> {
        for doc in self.inner.by_ref() {
            match check(&doc, &self.config) {
                Verdict::Pass => return Some(doc),
                Verdict::Fail(reason) => {
                    self.counters.record(reason);
                    if let Some(hook) = self.on_drop.as_mut() {
                        hook(&doc, reason);
                    }
                }
            }
        }
        None
    }
}

pub fn filter_stream<'a, I>(docs: I, config: &QualityConfig) -> FilterStream<'a, I::IntoIter>
where
    I: IntoIterator<Item = Document>,
{
    FilterStream {
        inner: docs.into_iter(),
        config: config.clone(),
        counters: FilterCounters::default(),
        on_drop: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const PROSE: &str = "The river town woke that morning, as fishermen dragged \
        their boats across wet stones and children ran along the narrow lanes toward school. \
        Near the old bridge a baker opened her shutters, letting warm bread scent drift over \
        the square while merchants argued quietly about prices, weather, and the coming \
        harvest festival that everyone hoped would bring visitors back again.";

    #[test]
    fn check_examples() {
        let cfg = QualityConfig::default();
        assert_eq!(check_text("", &cfg), Verdict::Fail(FailReason::TooShort));
        let spam = "spam ".repeat(1000);
        assert_eq!(
            check_text(&spam, &cfg),
            Verdict::Fail(FailReason::RepetitiveTopToken)
        );

        // Independent count of the fixture: 60 words, most frequent "the" x5 (0.083),
        // 54 distinct (0.9).
        let words: Vec<String> = PROSE
            .split_whitespace()
            .map(|w| {
                w.trim_matches(|c: char| c.is_ascii_punctuation())
                    .to_lowercase()
            })
            .collect();
        assert_eq!(words.len(), 60);
        let mut freq = HashMap::new();
        words
            .iter()
            .for_each(|w| *freq.entry(w.clone()).or_insert(0usize) += 1);
        assert_eq!(freq.values().max(), Some(&5));
        assert_eq!(freq.len(), 54);
        assert_eq!(check_text(PROSE, &cfg), Verdict::Pass);
    }

    #[test]
    fn low_diversity_is_reported_after_top_token() {
        let cfg = QualityConfig {
            min_words: 1,
            max_top_token_frac: 0.5,
            min_distinct_frac: 0.5,
        };
        // 4 distinct words cycled 10 times: top share 0.25, distinct share 0.1
        let text = "a b c d ".repeat(10);
        assert_eq!(
            check_text(&text, &cfg),
            Verdict::Fail(FailReason::RepetitiveLowDiversity)
        );
    }

    #[test]
    fn filter_stream_examples() {
        let cfg = QualityConfig::default();
        let docs = vec![
            Document::new("s", 0, "too short"),
            Document::new("s", 1, "spam ".repeat(100)),
            Document::new("s", 2, PROSE),
        ];
        let mut dropped = Vec::new();
        let mut stream = filter_stream(docs, &cfg).on_drop(|d, r| dropped.push((d.id.clone(), r)));
        let kept: Vec<_> = stream.by_ref().collect();
        let counters = stream.counters();
        drop(stream);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].id, "s:2");
        assert_eq!(
            counters,
            FilterCounters {
                too_short: 1,
                repetitive_top_token: 1,
                repetitive_low_diversity: 0
            }
        );
        assert_eq!(dropped.len() as u64, counters.dropped());

        let mut empty = filter_stream(Vec::new(), &cfg);
        assert!(empty.next().is_none());
        assert_eq!(empty.counters(), FilterCounters::default());

        let good = vec![Document::new("s", 0, PROSE), Document::new("s", 1, PROSE)];
        let mut s = filter_stream(good.clone(), &cfg);
        assert_eq!(s.by_ref().collect::<Vec<_>>(), good);
        assert_eq!(s.counters().dropped(), 0);
    }

    #[test]
    fn validation() {
        assert!(QualityConfig::default().validate().is_ok());
        let bad = QualityConfig {
            max_top_token_frac: 0.0,
            ..QualityConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn loosening_never_fails_a_pass(
            words in prop::collection::vec("[a-e]{1,2}", 0..80),
            min_words in 0usize..60,
            top in 0.05f64..1.0,
            distinct in 0.0f64..1.0,
            d_words in 0usize..20,
            d_top in 0.0f64..0.5,
            d_distinct in 0.0f64..0.5,
        ) {
            let text = words.join(" ");
            let strict = QualityConfig { min_words, max_top_token_frac: top, min_distinct_frac: distinct };
            let loose = QualityConfig {
                min_words: min_words.saturating_sub(d_words),
                max_top_token_frac: (top + d_top).min(1.0),
                min_distinct_frac: (distinct - d_distinct).max(0.0),
            };
            if check_text(&text, &strict).is_pass() {
                prop_assert!(check_text(&text, &loose).is_pass());
            }
        }
    }
}
