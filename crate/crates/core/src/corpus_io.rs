//! JSONL ingestion, selection manifests and subset extraction.
//!
//! Every input line is a JSON object with a string `"text"`; optional string
//! `"source"` and `"id"` fields are honored. Without an explicit id a document
//! is named `<shard-basename>:<line>`, where `line` is the 0-based physical
//! line number. Files ending in `.gz` are decompressed transparently.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use flate2::read::MultiGzDecoder;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub source: Option<String>,
    pub shard: String,
    pub ordinal: u64,
}

impl Document {
    pub fn synthesized_id(shard: &str, ordinal: u64) -> String {
        format!("{shard}:{ordinal}")
    }

    /// Document named as if it were line `ordinal` of `shard`.
    pub fn new(shard: &str, ordinal: u64, text: impl Into<String>) -> Self {
        Self {
            id: Self::synthesized_id(shard, ordinal),
            text: text.into(),
            source: None,
            shard: shard.to_owned(),
            ordinal,
        }
    }
}

#[derive(Deserialize)]
struct RawLine {
    text: String,
    #[serde(default)]
    source: Option<String>,
    #[serde(default)]
    id: Option<String>,
}

pub fn shard_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_string_lossy().into_owned())
}

fn open_reader(path: &Path) -> Result<Box<dyn BufRead + Send>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let is_gz = path.extension().is_some_and(|e| e == "gz");
    Ok(if is_gz {
        Box::new(BufReader::new(MultiGzDecoder::new(file)))
    } else {
        Box::new(BufReader::new(file))
    })
}

/// A parsed document plus the exact source line it came from.
#[derive(Clone, Debug)]
pub struct Record {
    pub doc: Document,
    pub line: String,
}

/// Lazily reads one shard. Malformed lines are counted in [`ShardReader::skipped`].
pub struct ShardReader {
    path: PathBuf,
    shard: String,
    reader: Box<dyn BufRead + Send>,
    line_no: u64,
    skipped: u64,
    buf: String,
}

impl ShardReader {
    pub fn open(path: &Path) -> Result<Self> {
        Ok(Self {
            path: path.to_owned(),
            shard: shard_name(path),
            reader: open_reader(path)?,
            line_no: 0,
            skipped: 0,
            buf: String::new(),
        })
    }

    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    fn parse(&self, line: &str, ordinal: u64) -> Option<Document> {
        let raw: RawLine = serde_json::from_str(line).ok()?;
        let id = match raw.id {
            Some(id) if id.is_empty() => return None,
            Some(id) => id,
            None => Document::synthesized_id(&self.shard, ordinal),
        };
        Some(Document {
            id,
            text: raw.text,
            source: raw.source,
            shard: self.shard.clone(),
            ordinal,
        })
    }
}

impl Iterator for ShardReader {
    type Item = Result<Record>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.reader.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(Error::io(&self.path, e))),
            }
            let ordinal = self.line_no;
            self.line_no += 1;
            let line = self.buf.trim_end_matches(['\n', '\r']);
            if line.trim().is_empty() {
                continue;
            }
            match self.parse(line, ordinal) {
                Some(doc) => {
                    return Some(Ok(Record {
                        doc,
                        line: line.to_owned(),
                    }))
                }
                None => self.skipped += 1,
            }
        }
    }
}

/// Documents of several shards in shard order, then line order.
pub struct DocumentStream {
    paths: std::vec::IntoIter<PathBuf>,
    current: Option<ShardReader>,
    skipped: u64,
}

impl DocumentStream {
    /// Total malformed lines skipped so far, across all shards.
    pub fn skipped(&self) -> u64 {
        self.skipped + self.current.as_ref().map_or(0, ShardReader::skipped)
    }
}

impl Iterator for DocumentStream {
    type Item = Result<Document>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Some(reader) = self.current.as_mut() {
                match reader.next() {
                    Some(item) => return Some(item.map(|r| r.doc)),
                    None => {
                        self.skipped += reader.skipped();
                        self.current = None;
                    }
                }
            }
            let path = self.paths.next()?;
            match ShardReader::open(&path) {
                Ok(reader) => self.current = Some(reader),
                Err(e) => return Some(Err(e)),
            }
        }
    }
}

pub fn stream_documents<P: AsRef<Path>>(paths: &[P]) -> DocumentStream {
    DocumentStream {
        paths: paths
            .iter()
            .map(|p| p.as_ref().to_owned())
            .collect::<Vec<_>>()
            .into_iter(),
        current: None,
        skipped: 0,
    }
}

/// Sorts shard paths into the canonical processing order and rejects shard
/// names that would synthesize colliding ids.
pub fn canonical_shards<P: AsRef<Path>>(paths: &[P]) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = paths.iter().map(|p| p.as_ref().to_owned()).collect();
    out.sort_by(|a, b| shard_name(a).cmp(&shard_name(b)).then_with(|| a.cmp(b)));
    out.dedup();
    for pair in out.windows(2) {
        if shard_name(&pair[0]) == shard_name(&pair[1]) {
            return Err(Error::Config(format!(
                "shards {} and {} share a file name; document ids would collide",
                pair[0].display(),
                pair[1].display()
            )));
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMethod {
    Dsir,
    Random,
    Heuristic,
    TopkHeuristic,
    ClassifierIr,
}

impl SelectionMethod {
    pub const ALL: [SelectionMethod; 5] = [
        SelectionMethod::Dsir,
        SelectionMethod::Random,
        SelectionMethod::Heuristic,
        SelectionMethod::TopkHeuristic,
        SelectionMethod::ClassifierIr,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SelectionMethod::Dsir => "dsir",
            SelectionMethod::Random => "random",
            SelectionMethod::Heuristic => "heuristic",
            SelectionMethod::TopkHeuristic => "topk_heuristic",
            SelectionMethod::ClassifierIr => "classifier_ir",
        }
    }
}

impl fmt::Display for SelectionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SelectionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown selection method {s:?}")))
    }
}

/// Ids chosen by a selection routine, before provenance is attached.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Selection {
    pub ids: Vec<String>,
    /// Fewer candidates than requested were available.
    pub short_pool: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionManifest {
    pub selected_ids: Vec<String>,
    pub k: u64,
    pub seed: u64,
    pub method: SelectionMethod,
    pub config_digest: String,
    pub created_at: String,
    #[serde(default)]
    pub short_pool: bool,
    #[serde(default)]
    pub model_digests: Vec<String>,
}

impl SelectionManifest {
    pub fn from_selection(
        selection: Selection,
        k: u64,
        seed: u64,
        method: SelectionMethod,
        config_digest: impl Into<String>,
        created_at: impl Into<String>,
    ) -> Self {
        Self {
            selected_ids: selection.ids,
            k,
            seed,
            method,
            config_digest: config_digest.into(),
            created_at: created_at.into(),
            short_pool: selection.short_pool,
            model_digests: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.selected_ids.len());
        for id in &self.selected_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidManifest(format!("duplicate id {id:?}")));
            }
        }
        let n = self.selected_ids.len() as u64;
        if self.short_pool {
            if n > self.k {
                return Err(Error::InvalidManifest(format!(
                    "{n} ids exceed requested k={}",
                    self.k
                )));
            }
        } else if n != self.k {
            return Err(Error::InvalidManifest(format!(
                "{n} ids but k={} and no short-pool flag",
                self.k
            )));
        }
        Ok(())
    }
}

pub fn write_manifest(manifest: &SelectionManifest, path: &Path) -> Result<()> {
    manifest.validate()?;
    let mut bytes =
        serde_json::to_vec_pretty(manifest).map_err(|e| Error::format("manifest", e))?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<SelectionManifest> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let manifest: SelectionManifest =
        serde_json::from_slice(&bytes).map_err(|e| Error::format("manifest", e))?;
    manifest.validate()?;
    Ok(manifest)
}

pub(crate) fn create_writer(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Writes the selected documents' original lines to `out_path` in manifest
/// order. Returns the number of documents written.
pub fn extract_subset<P: AsRef<Path>>(
    paths: &[P],
    manifest: &SelectionManifest,
    out_path: &Path,
) -> Result<u64> {
    let wanted: HashSet<&str> = manifest.selected_ids.iter().map(String::as_str).collect();
    let mut found: HashMap<String, String> = HashMap::with_capacity(wanted.len());
    if !wanted.is_empty() {
        for path in paths {
            for record in ShardReader::open(path.as_ref())? {
                let record = record?;
                if wanted.contains(record.doc.id.as_str()) && !found.contains_key(&record.doc.id) {
                    found.insert(record.doc.id, record.line);
                }
            }
        }
    }
    if let Some(missing) = manifest
        .selected_ids
        .iter()
        .find(|id| !found.contains_key(id.as_str()))
    {
        return Err(Error::MissingId(missing.clone()));
    }

    let mut w = create_writer(out_path)?;
    for id in &manifest.selected_ids {
        let line = &found[id];
        w.write_all(line.as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .map_err(|e| Error::io(out_path, e))?;
    }
    w.flush().map_err(|e| Error::io(out_path, e))?;
    Ok(manifest.selected_ids.len() as u64)
}

/// Writes documents as `{"id", "text", "source"?}` JSONL.
pub fn write_documents<'a, I>(docs: I, out_path: &Path) -> Result<u64>
where
    I: IntoIterator<Item = &'a Document>,
{
    #[derive(Serialize)]
    struct Out<'a> {
        id: &'a str,
        text: &'a str,
        #[serde(skip_serializing_if = "Option::is_none")]
        source: Option<&'a str>,
    }
    let mut w = create_writer(out_path)?;
    let mut n = 0;
    for doc in docs {
        let out = Out {
            id: &doc.id,
            text: &doc.text,
            source: doc.source.as_deref(),
        };
        serde_json::to_writer(&mut w, &out).map_err(|e| Error::format("document", e))?;
        w.write_all(b"\n").map_err(|e| Error::io(out_path, e))?;
        n += 1;
    }
    w.flush().map_err(|e| Error::io(out_path, e))?;
    Ok(n)
}
