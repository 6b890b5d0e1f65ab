//! Weighted sampling without replacement via Gumbel top-k.
//!
//! Each document's key is `log_weight + g`, with `g = -ln(-ln U)` and `U`
//! drawn from the document's own counter-based stream. Taking the `k` largest
//! keys is distributed exactly like `k` sequential categorical draws with
//! removal, and the result is independent of entry order and parallelism.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus_io::{create_writer, Selection};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

pub fn gumbel_from_uniform(u: f64) -> f64 {
    -(-u.ln()).ln()
}

pub fn gumbel_noise(doc_id: &str, seed: u64) -> f64 {
    gumbel_from_uniform(rng::uniform_for_id(seed, doc_id, Stream::Gumbel))
}

pub fn gumbel_key(doc_id: &str, log_weight: f64, seed: u64) -> f64 {
    log_weight + gumbel_noise(doc_id, seed)
}

/// A keyed candidate. Higher key ranks first; equal keys rank the
/// lexicographically smaller id first.
#[derive(Clone, Debug)]
pub struct Ranked<T = ()> {
    pub key: f64,
    pub id: String,
    pub payload: T,
}

impl<T> PartialEq for Ranked<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T> Eq for Ranked<T> {}

impl<T> PartialOrd for Ranked<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T> Ord for Ranked<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key
            .total_cmp(&other.key)
            .then_with(|| other.id.cmp(&self.id))
    }
}

/// Bounded min-heap keeping the `k` best-ranked candidates seen so far.
#[derive(Clone, Debug)]
pub struct TopK<T = ()> {
    k: usize,
    heap: BinaryHeap<Reverse<Ranked<T>>>,
    seen: u64,
}

impl<T> TopK<T> {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k.min(1 << 20) + 1),
            seen: 0,
        }
    }

    pub fn push(&mut self, item: Ranked<T>) {
        self.seen += 1;
        if self.k == 0 {
            return;
        }
        if self.heap.len() < self.k {
            self.heap.push(Reverse(item));
        } else if let Some(Reverse(worst)) = self.heap.peek() {
            if item > *worst {
                self.heap.pop();
                self.heap.push(Reverse(item));
            }
        }
    }

    /// Whether a candidate with this key and id would currently be kept.
    /// Lets callers skip building an expensive payload.
    pub fn would_accept(&self, key: f64, id: &str) -> bool {
        if self.k == 0 {
            return false;
        }
        if self.heap.len() < self.k {
            return true;
        }
        match self.heap.peek() {
            Some(Reverse(worst)) => match key.total_cmp(&worst.key) {
                Ordering::Greater => true,
                Ordering::Equal => id < worst.id.as_str(),
                Ordering::Less => false,
            },
            None => true,
        }
    }

    /// Counts a candidate that was rejected without being pushed.
    pub fn count_rejected(&mut self) {
        self.seen += 1;
    }

    /// Kept candidates in no particular order.
    pub fn iter(&self) -> impl Iterator<Item = &Ranked<T>> {
        self.heap.iter().map(|Reverse(r)| r)
    }

    pub fn merge(mut self, other: TopK<T>) -> Self {
        let seen = self.seen + other.seen;
        for Reverse(item) in other.heap {
            self.push(item);
        }
        self.seen = seen;
        self
    }

    /// Number of candidates offered, kept or not.
    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Kept candidates, best first.
    pub fn into_sorted(self) -> Vec<Ranked<T>> {
        let mut v: Vec<Ranked<T>> = self.heap.into_iter().map(|Reverse(r)| r).collect();
        v.sort_unstable_by(|a, b| b.cmp(a));
        v
    }

    pub fn into_selection(self) -> Selection {
        let short_pool = (self.seen as u128) < self.k as u128;
        Selection {
            ids: self.into_sorted().into_iter().map(|r| r.id).collect(),
            short_pool,
        }
    }
}

/// Top `k` ids of a key stream, best first, using O(k) memory.
pub fn streaming_top_k<I>(key_stream: I, k: usize) -> Vec<(String, f64)>
where
    I: IntoIterator<Item = (String, f64)>,
{
    let mut top = TopK::new(k);
    for (id, key) in key_stream {
        top.push(Ranked {
            key,
            id,
            payload: (),
        });
    }
    top.into_sorted()
        .into_iter()
        .map(|r| (r.id, r.key))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightEntry {
    pub id: String,
    pub log_weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightTable {
    pub entries: Vec<WeightEntry>,
    pub seed: u64,
    pub config_digest: String,
    pub model_digests: Vec<String>,
}

impl WeightTable {
    pub fn new(entries: Vec<WeightEntry>, seed: u64) -> Self {
        Self {
            entries,
            seed,
            config_digest: String::new(),
            model_digests: Vec::new(),
        }
    }

    pub fn from_pairs<I, S>(pairs: I, seed: u64) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        Self::new(
            pairs
                .into_iter()
                .map(|(id, log_weight)| WeightEntry {
                    id: id.into(),
                    log_weight,
                })
                .collect(),
            seed,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::with_capacity(self.entries.len());
        for e in &self.entries {
            if !e.log_weight.is_finite() {
                return Err(Error::format(
                    "weight table",
                    format!("non-finite log weight for {:?}", e.id),
                ));
            }
            if !seen.insert(e.id.as_str()) {
                return Err(Error::format(
                    "weight table",
                    format!("duplicate id {:?}", e.id),
                ));
            }
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = create_writer(path)?;
        write_table_header(
            &mut w,
            "weights",
            self.seed,
            &self.config_digest,
            &self.model_digests,
        )
        .and_then(|_| writeln!(w, "id\tlog_weight"))
        .map_err(|e| Error::io(path, e))?;
        for e in &self.entries {
            write_row(&mut w, &e.id, e.log_weight).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let table = read_table(path, "weights", "log_weight")?;
        let t = WeightTable {
            entries: table
                .rows
                .into_iter()
                .map(|(id, log_weight)| WeightEntry { id, log_weight })
                .collect(),
            seed: table.seed,
            config_digest: table.config_digest,
            model_digests: table.model_digests,
        };
        t.validate()?;
        Ok(t)
    }
}

/// Common shape of the weight and score TSV files.
pub(crate) struct Table {
    pub seed: u64,
    pub config_digest: String,
    pub model_digests: Vec<String>,
    pub rows: Vec<(String, f64)>,
}

pub(crate) fn write_table_header<W: Write>(
    w: &mut W,
    kind: &str,
    seed: u64,
    config_digest: &str,
    model_digests: &[String],
) -> std::io::Result<()> {
    write!(
        w,
        "#dsir-{kind}\tseed={seed}\tconfig_digest={config_digest}"
    )?;
    if !model_digests.is_empty() {
        write!(w, "\tmodel_digests={}", model_digests.join(","))?;
    }
    writeln!(w)
}

pub(crate) fn escape_id(id: &str) -> std::borrow::Cow<'_, str> {
    if id.contains(['\\', '\t', '\n', '\r']) {
        let mut out = String::with_capacity(id.len() + 2);
        for c in id.chars() {
            match c {
                '\\' => out.push_str("\\\\"),
                '\t' => out.push_str("\\t"),
                '\n' => out.push_str("\\n"),
                '\r' => out.push_str("\\r"),
                c => out.push(c),
            }
        }
        out.into()
    } else {
        id.into()
    }
}

pub(crate) fn unescape_id(s: &str) -> Option<String> {
    if !s.contains('\\') {
        return Some(s.to_owned());
    }
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        out.push(match chars.next()? {
            '\\' => '\\',
            't' => '\t',
            'n' => '\n',
            'r' => '\r',
            _ => return None,
        });
    }
    Some(out)
}

/// One `id<TAB>value` row; floats use Rust's shortest round-trip formatting.
pub(crate) fn write_row<W: Write>(w: &mut W, id: &str, value: f64) -> std::io::Result<()> {
    writeln!(w, "{}\t{:?}", escape_id(id), value)
}

pub(crate) fn read_table(path: &Path, kind: &str, column: &str) -> Result<Table> {
    let what = format!("{kind} table {}", path.display());
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = std::io::BufReader::new(file).lines();
    let next_line = |lines: &mut std::io::Lines<_>| -> Result<Option<String>> {
        lines.next().transpose().map_err(|e| Error::io(path, e))
    };

    let header = next_line(&mut lines)?.ok_or_else(|| Error::format(&what, "empty file"))?;
    let mut fields = header.split('\t');
    if fields.next() != Some(format!("#dsir-{kind}").as_str()) {
        return Err(Error::format(&what, "missing header line"));
    }
    let (mut seed, mut config_digest, mut model_digests) = (None, None, Vec::new());
    for field in fields {
        match field.split_once('=') {
            Some(("seed", v)) => {
                seed = Some(v.parse::<u64>().map_err(|e| Error::format(&what, e))?)
            }
            Some(("config_digest", v)) => config_digest = Some(v.to_owned()),
            Some(("model_digests", v)) => {
                model_digests = v
                    .split(',')
                    .filter(|s| !s.is_empty())
                    .map(str::to_owned)
                    .collect()
            }
            _ => {
                return Err(Error::format(
                    &what,
                    format!("unknown header field {field:?}"),
                ))
            }
        }
    }
    let columns = next_line(&mut lines)?.unwrap_or_default();
    if columns != format!("id\t{column}") {
        return Err(Error::format(
            &what,
            format!("expected column line id\\t{column}"),
        ));
    }

    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let row = line
            .split_once('\t')
            .and_then(|(id, v)| Some((unescape_id(id)?, v.parse::<f64>().ok()?)))
            .ok_or_else(|| Error::format(&what, format!("bad row {}", i + 3)))?;
        rows.push(row);
    }
    Ok(Table {
        seed: seed.ok_or_else(|| Error::format(&what, "header lacks seed"))?,
        config_digest: config_digest.unwrap_or_default(),
        model_digests,
        rows,
    })
}

/// Ids of the `k` largest Gumbel keys under the table's seed, best first.
/// Requests beyond the table size return every id with `short_pool` set.
pub fn select_top_k(table: &WeightTable, k: usize) -> Selection {
    select_top_k_with_seed(&table.entries, k, table.seed)
}

pub fn select_top_k_with_seed(entries: &[WeightEntry], k: usize, seed: u64) -> Selection {
    entries
        .par_iter()
        .fold(
            || TopK::new(k),
            |mut top, e| {
                top.push(Ranked {
                    key: gumbel_key(&e.id, e.log_weight, seed),
                    id: e.id.clone(),
                    payload: (),
                });
                top
            },
        )
        .reduce(|| TopK::new(k), TopK::merge)
        .into_selection()
}

/// Reference sampler: `k` sequential categorical draws with removal and
/// renormalization. Exists to validate [`select_top_k`]; quadratic in `k`.
pub fn sequential_swor_oracle(weights: &[f64], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k > weights.len() {
        return Err(Error::Config(format!(
            "cannot draw {k} of {} items without replacement",
            weights.len()
        )));
    }
    if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
        return Err(Error::Config(
            "oracle weights must be positive and finite".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut remaining: Vec<usize> = (0..weights.len()).collect();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let total: f64 = remaining.iter().map(|&i| weights[i]).sum();
        let mut u = rng.gen::<f64>() * total;
        let mut pick = remaining.len() - 1;
        for (pos, &i) in remaining.iter().enumerate() {
            if u < weights[i] {
                pick = pos;
                break;
            }
            u -= weights[i];
        }
        out.push(remaining.remove(pick));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(weights: &[f64], seed: u64) -> WeightTable {
        WeightTable::from_pairs(
            weights
                .iter()
                .enumerate()
                .map(|(i, &w)| (format!("d{}", i + 1), w)),
            seed,
        )
    }

    #[test]
    fn gumbel_key_is_deterministic_and_additive() {
        let a = gumbel_key("doc:7", 0.25, 42);
        assert_eq!(a, gumbel_key("doc:7", 0.25, 42));
        let shifted = gumbel_key("doc:7", 0.25 + 3.0, 42);
        assert!((shifted - a - 3.0).abs() < 1e-12);
    }

    #[test]
    fn gumbel_noise_matches_cdf() {
        let n = 100_000;
        let mut g: Vec<f64> = (0..n).map(|i| gumbel_noise(&format!("id{i}"), 9)).collect();
        g.sort_by(f64::total_cmp);
        let ks = g
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let cdf = (-(-x).exp()).exp();
                let lo = i as f64 / n as f64;
                let hi = (i + 1) as f64 / n as f64;
                (cdf - lo).abs().max((hi - cdf).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.01, "KS statistic {ks}");
    }

    #[test]
    fn select_edge_cases() {
        let t = table(&[0.0, 1.0, 2.0], 1);
        let all = select_top_k(&t, 3);
        assert_eq!(all.ids.len(), 3);
        assert!(!all.short_pool);
        let none = select_top_k(&t, 0);
        assert!(none.ids.is_empty() && !none.short_pool);
        let over = select_top_k(&t, 10);
        assert_eq!(over.ids.len(), 3);
        assert!(over.short_pool);
        let mut sorted = over.ids.clone();
        sorted.sort();
        assert_eq!(sorted, vec!["d1", "d2", "d3"]);
    }

    #[test]
    fn selection_frequency_matches_categorical() {
        let weights = [1.0f64, 1.0, 2.0].map(f64::ln);
        let runs = 100_000;
        let hits = (0..runs)
            .filter(|&s| select_top_k(&table(&weights, s), 1).ids[0] == "d3")
            .count();
        let freq = hits as f64 / runs as f64;
        assert!((freq - 0.5).abs() < 0.01, "freq {freq}");
    }

    #[test]
    fn ties_break_by_id() {
        let top = streaming_top_k(
            vec![
                ("b".into(), 1.0),
                ("a".into(), 1.0),
                ("c".into(), 1.0),
                ("z".into(), 0.5),
            ],
            2,
        );
        assert_eq!(top, vec![("a".to_string(), 1.0), ("b".to_string(), 1.0)]);
    }

    #[test]
    fn streaming_top_k_matches_sort() {
        let keys: Vec<(String, f64)> = (0..10)
            .map(|i| (format!("k{i}"), ((i * 7) % 10) as f64))
            .collect();
        let mut sorted = keys.clone();
        sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        assert_eq!(streaming_top_k(keys.clone(), 3), sorted[..3].to_vec());
        assert_eq!(streaming_top_k(keys, 50), sorted);
    }

    #[test]
    fn streaming_top_k_million() {
        let n = 1_000_000u64;
        let key = |i: u64| rng::bits_to_open_unit(crate::hashing::mix64(i));
        let top = streaming_top_k((0..n).map(|i| (format!("{i:07}"), key(i))), 1000);
        let mut all: Vec<(String, f64)> = (0..n).map(|i| (format!("{i:07}"), key(i))).collect();
        all.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        all.truncate(1000);
        assert_eq!(top, all);
    }

    #[test]
    fn oracle_examples() {
        assert_eq!(sequential_swor_oracle(&[1.0], 1, 5).unwrap(), vec![0]);
        assert!(sequential_swor_oracle(&[1.0], 2, 5).is_err());
        let runs = 100_000;
        let first_zero = (0..runs)
            .filter(|&s| sequential_swor_oracle(&[1.0, 1.0], 2, s).unwrap()[0] == 0)
            .count();
        let freq = first_zero as f64 / runs as f64;
        assert!((freq - 0.5).abs() < 0.01, "freq {freq}");
    }

    #[test]
    fn table_round_trip_with_awkward_ids() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.tsv");
        let mut t = WeightTable::from_pairs(
            [
                ("plain", 0.0),
                ("tab\there", -1.5e-7),
                ("back\\slash\nnl", 12.25),
                ("ünï", 3.0),
            ],
            77,
        );
        t.config_digest = "abc".into();
        t.model_digests = vec!["m1".into(), "m2".into()];
        t.write(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.lines().nth(2).unwrap() == "plain\t0.0");
        assert_eq!(WeightTable::read(&path).unwrap(), t);
    }

    proptest! {
        #[test]
        fn selection_ignores_order_and_shift(
            weights in prop::collection::vec(-5.0f64..5.0, 1..30),
            k in 0usize..35,
            seed in any::<u64>(),
            shift in -100.0f64..100.0,
            perm_seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let base = table(&weights, seed);
            let expected = select_top_k(&base, k);
            let mut permuted = base.clone();
            permuted.entries.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
            prop_assert_eq!(&select_top_k(&permuted, k), &expected);
            let mut shifted = base.clone();
            shifted.entries.iter_mut().for_each(|e| e.log_weight += shift);
            let got = select_top_k(&shifted, k);
            let mut a = got.ids.clone();
            let mut b = expected.ids.clone();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
            let unique: std::collections::HashSet<_> = expected.ids.iter().collect();
            prop_assert_eq!(unique.len(), expected.ids.len());
        }
    }
}
