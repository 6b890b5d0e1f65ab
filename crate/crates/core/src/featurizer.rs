//! Hashed n-gram features.
//!
//! Text is split on Unicode whitespace, leading and trailing punctuation
//! (general category P*) is stripped from every token, tokens are optionally
//! lowercased, and empty tokens are dropped. N-grams of each configured order
//! are the contiguous token windows joined by a single space, emitted in
//! ascending order. Each n-gram is hashed with [`crate::hashing`] (seeded by
//! `hash_seed`) and reduced modulo `num_buckets`.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::error::{Error, Result};
use crate::hashing::StableHasher;

/// Version tag folded into the featurizer digest; bump when tokenization or
/// hashing changes.
pub const FEATURIZER_VERSION: &str = "ws-punct-lower/fnv1a64-splitmix64/v1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeaturizerConfig {
    pub num_buckets: u32,
    pub orders: BTreeSet<usize>,
    pub lowercase: bool,
    pub hash_seed: u64,
}

impl Default for FeaturizerConfig {
    fn default() -> Self {
        Self {
            num_buckets: 10_000,
            orders: BTreeSet::from([1, 2]),
            lowercase: true,
            hash_seed: 0,
        }
    }
}

impl FeaturizerConfig {
    pub fn unigram() -> Self {
        Self {
            orders: BTreeSet::from([1]),
            ..Self::default()
        }
    }

    pub fn with_buckets(num_buckets: u32) -> Self {
        Self {
            num_buckets,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_buckets < 2 {
            return Err(Error::Config(format!(
                "num_buckets must be >= 2, got {}",
                self.num_buckets
            )));
        }
        if self.orders.is_empty() {
            return Err(Error::Config("n-gram orders must be nonempty".into()));
        }
        if self.orders.contains(&0) {
            return Err(Error::Config("n-gram orders must be >= 1".into()));
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        #[derive(Serialize)]
        struct Tagged<'a> {
            version: &'a str,
            config: &'a FeaturizerConfig,
        }
        artifact::json_digest(&Tagged {
            version: FEATURIZER_VERSION,
            config: self,
        })
    }
}

/// Sparse bucket counts of one document, sorted by bucket index.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FeatureVector {
    counts: Vec<(u32, u32)>,
    total: u64,
}

impl FeatureVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a vector from unsorted bucket hits; repeated buckets accumulate.
    pub fn from_buckets(mut buckets: Vec<u32>) -> Self {
        buckets.sort_unstable();
        let total = buckets.len() as u64;
        let mut counts: Vec<(u32, u32)> = Vec::new();
        for b in buckets {
            match counts.last_mut() {
                Some((last, c)) if *last == b => *c += 1,
                _ => counts.push((b, 1)),
            }
        }
        Self { counts, total }
    }

    /// Builds a vector from `(bucket, count)` pairs; zero counts are dropped.
    pub fn from_pairs<I: IntoIterator<Item = (u32, u32)>>(pairs: I) -> Self {
        let mut out = Self::new();
        for (b, c) in pairs {
            out.add_count(b, c);
        }
        out
    }

    pub fn add_count(&mut self, bucket: u32, count: u32) {
        if count == 0 {
            return;
        }
        match self.counts.binary_search_by_key(&bucket, |&(b, _)| b) {
            Ok(i) => self.counts[i].1 += count,
            Err(i) => self.counts.insert(i, (bucket, count)),
        }
        self.total += u64::from(count);
    }

    pub fn entries(&self) -> &[(u32, u32)] {
        &self.counts
    }

    pub fn get(&self, bucket: u32) -> u32 {
        self.counts
            .binary_search_by_key(&bucket, |&(b, _)| b)
            .map(|i| self.counts[i].1)
            .unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn max_bucket(&self) -> Option<u32> {
        self.counts.last().map(|&(b, _)| b)
    }

    /// Elementwise sum.
    pub fn merged(&self, other: &FeatureVector) -> FeatureVector {
        let mut out = self.clone();
        for &(b, c) in &other.counts {
            out.add_count(b, c);
        }
        out
    }
}

fn unicode_punct() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\A\p{P}\z").expect("static regex"))
}

/// Unicode general category P* (Pc, Pd, Ps, Pe, Pi, Pf, Po).
pub fn is_punctuation(c: char) -> bool {
    if c.is_ascii() {
        // ASCII symbols $+<=>^`|~ are category S, not P.
        return matches!(
            c,
            '!' | '"'
                | '#'
                | '%'
                | '&'
                | '\''
                | '('
                | ')'
                | '*'
                | ','
                | '-'
                | '.'
                | '/'
                | ':'
                | ';'
                | '?'
                | '@'
                | '['
                | '\\'
                | ']'
                | '_'
                | '{'
                | '}'
        );
    }
    let mut buf = [0u8; 4];
    unicode_punct().is_match(c.encode_utf8(&mut buf))
}

pub fn tokenize(text: &str, config: &FeaturizerConfig) -> Vec<String> {
    text.split_whitespace()
        .map(|raw| raw.trim_matches(is_punctuation))
        .filter(|t| !t.is_empty())
        .map(|t| {
            if config.lowercase {
                t.to_lowercase()
            } else {
                t.to_owned()
            }
        })
        .collect()
}

pub fn ngram_list(tokens: &[String], orders: &BTreeSet<usize>) -> Vec<String> {
    let mut out = Vec::new();
    for &n in orders {
        if n == 0 || n > tokens.len() {
            continue;
        }
        out.extend(tokens.windows(n).map(|w| w.join(" ")));
    }
    out
}

pub fn hash_bucket(gram: &str, config: &FeaturizerConfig) -> u32 {
    let mut h = StableHasher::new(config.hash_seed);
    h.write(gram.as_bytes());
    (h.finish() % u64::from(config.num_buckets)) as u32
}

/// Bucket of the n-gram `window.join(" ")`, without building the string.
fn window_bucket(window: &[String], config: &FeaturizerConfig) -> u32 {
    let mut h = StableHasher::new(config.hash_seed);
    for (i, tok) in window.iter().enumerate() {
        if i > 0 {
            h.write(b" ");
        }
        h.write(tok.as_bytes());
    }
    (h.finish() % u64::from(config.num_buckets)) as u32
}

pub fn featurize_tokens(tokens: &[String], config: &FeaturizerConfig) -> FeatureVector {
    let mut buckets = Vec::new();
    for &n in &config.orders {
        if n == 0 || n > tokens.len() {
            continue;
        }
        buckets.extend(tokens.windows(n).map(|w| window_bucket(w, config)));
    }
    FeatureVector::from_buckets(buckets)
}

pub fn featurize(text: &str, config: &FeaturizerConfig) -> FeatureVector {
    featurize_tokens(&tokenize(text, config), config)
}
