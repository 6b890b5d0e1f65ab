#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use dsir::featurizer::{hash_bucket, FeaturizerConfig};

pub fn write_lines(dir: &Path, name: &str, lines: &[&str]) -> PathBuf {
    let path = dir.join(name);
    let mut body = lines.join("\n");
    if !lines.is_empty() {
        body.push('\n');
    }
    fs::write(&path, body).unwrap();
    path
}

pub fn write_texts(dir: &Path, name: &str, texts: &[String]) -> PathBuf {
    let lines: Vec<String> = texts
        .iter()
        .map(|t| serde_json::json!({ "text": t }).to_string())
        .collect();
    write_lines(
        dir,
        name,
        &lines.iter().map(String::as_str).collect::<Vec<_>>(),
    )
}

/// Two words that hash to different buckets under `cfg`.
pub fn words_in_distinct_buckets(cfg: &FeaturizerConfig) -> (String, String) {
    let a = "alpha".to_owned();
    let b = (0..)
        .map(|i| format!("w{i}"))
        .find(|w| hash_bucket(w, cfg) != hash_bucket(&a, cfg))
        .unwrap();
    (a, b)
}

/// Deterministic filler prose of `n` distinct-ish words drawn from `vocab`.
pub fn prose(seed: usize, n: usize, vocab: &[&str]) -> String {
    (0..n)
        .map(|i| vocab[(seed * 31 + i * 7 + i * i) % vocab.len()])
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn vocab(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}
