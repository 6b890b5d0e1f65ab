mod common;

use std::fs;

use dsir::corpus_io::{
    extract_subset, read_manifest, stream_documents, write_documents, write_manifest, ShardReader,
};
use dsir::{Document, Error, Selection, SelectionManifest, SelectionMethod};

use common::write_lines;

fn manifest(ids: &[&str]) -> SelectionManifest {
    SelectionManifest::from_selection(
        Selection {
            ids: ids.iter().map(|s| s.to_string()).collect(),
            short_pool: false,
        },
        ids.len() as u64,
        42,
        SelectionMethod::Dsir,
        "abc123",
        "2024-01-01T00:00:00Z",
    )
}

#[test]
fn two_documents_in_line_order() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_lines(
        dir.path(),
        "shard.jsonl",
        &[r#"{"text":"a"}"#, r#"{"text":"b"}"#],
    );
    let docs: Vec<Document> = stream_documents(&[&path]).map(Result::unwrap).collect();
    assert_eq!(docs.len(), 2);
    assert_eq!((docs[0].ordinal, docs[1].ordinal), (0, 1));
    assert_eq!(docs[0].id, "shard.jsonl:0");
    assert_eq!(docs[1].text, "b");
    assert_eq!(docs[0].shard, "shard.jsonl");
}

#[test]
fn empty_file_yields_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_lines(dir.path(), "empty.jsonl", &[]);
    let mut stream = stream_documents(&[&path]);
    assert!(stream.next().is_none());
    assert_eq!(stream.skipped(), 0);
}

#[test]
fn garbage_line_is_skipped_and_counted() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_lines(dir.path(), "mixed.jsonl", &[r#"{"text":"ok"}"#, "garbage"]);
    let mut stream = stream_documents(&[&path]);
    let docs: Vec<Document> = stream.by_ref().map(Result::unwrap).collect();
    assert_eq!(docs.len(), 1);
    assert_eq!(stream.skipped(), 1);
}

#[test]
fn ordinals_count_physical_lines() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_lines(
        dir.path(),
        "s.jsonl",
        &[
            r#"{"text":"a"}"#,
            "",
            "{broken",
            r#"{"text":"b","source":"web"}"#,
            r#"{"text":"c","id":"custom"}"#,
        ],
    );
    let mut reader = ShardReader::open(&path).unwrap();
    let recs: Vec<_> = reader.by_ref().map(Result::unwrap).collect();
    let ids: Vec<&str> = recs.iter().map(|r| r.doc.id.as_str()).collect();
    assert_eq!(ids, ["s.jsonl:0", "s.jsonl:3", "custom"]);
    assert_eq!(recs[1].doc.source.as_deref(), Some("web"));
    assert_eq!(recs[1].line, r#"{"text":"b","source":"web"}"#);
    assert_eq!(reader.skipped(), 1);
}

#[test]
fn unreadable_file_names_the_path() {
    let err = stream_documents(&["/nonexistent/shard.jsonl"])
        .next()
        .unwrap()
        .unwrap_err();
    assert!(
        err.to_string().contains("/nonexistent/shard.jsonl"),
        "{err}"
    );
}

#[test]
fn gzip_shards_are_read() {
    use std::io::Write;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("z.jsonl.gz");
    let mut enc = flate2::write::GzEncoder::new(
        fs::File::create(&path).unwrap(),
        flate2::Compression::fast(),
    );
    writeln!(enc, r#"{{"text":"zipped"}}"#).unwrap();
    enc.finish().unwrap();
    let docs: Vec<Document> = stream_documents(&[&path]).map(Result::unwrap).collect();
    assert_eq!(docs.len(), 1);
    assert_eq!(docs[0].text, "zipped");
    assert_eq!(docs[0].id, "z.jsonl.gz:0");
}

#[test]
fn manifest_with_two_ids() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    write_manifest(&manifest(&["a:0", "a:3"]), &path).unwrap();
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(v["selected_ids"].as_array().unwrap().len(), 2);
    assert_eq!(v["k"], 2);
    assert_eq!(v["method"], "dsir");
}

#[test]
fn manifest_round_trips_unicode_ids() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    let m = manifest(&["données:0", "日本語:7", "emoji 🦀:2", "tab\there"]);
    write_manifest(&m, &path).unwrap();
    assert_eq!(read_manifest(&path).unwrap(), m);
}

#[test]
fn manifest_with_duplicates_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    let err = write_manifest(&manifest(&["a:1", "a:1"]), &path).unwrap_err();
    assert!(matches!(err, Error::InvalidManifest(_)), "{err}");
    assert!(!path.exists());
}

#[test]
fn extract_writes_manifest_order() {
    let dir = tempfile::tempdir().unwrap();
    let lines: Vec<String> = (0..5).map(|i| format!(r#"{{"text":"doc {i}"}}"#)).collect();
    let path = write_lines(
        dir.path(),
        "c.jsonl",
        &lines.iter().map(String::as_str).collect::<Vec<_>>(),
    );
    let out = dir.path().join("out.jsonl");
    let n = extract_subset(&[&path], &manifest(&["c.jsonl:3", "c.jsonl:1"]), &out).unwrap();
    assert_eq!(n, 2);
    assert_eq!(
        fs::read_to_string(&out).unwrap(),
        format!("{}\n{}\n", lines[3], lines[1])
    );
}

#[test]
fn extract_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_lines(dir.path(), "c.jsonl", &[r#"{"text":"x"}"#]);
    let out = dir.path().join("out.jsonl");
    let m = SelectionManifest {
        short_pool: true,
        ..manifest(&[])
    };
    assert_eq!(extract_subset(&[&path], &m, &out).unwrap(), 0);
    assert_eq!(fs::read_to_string(&out).unwrap(), "");
}

#[test]
fn extract_missing_id_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_lines(dir.path(), "c.jsonl", &[r#"{"text":"x"}"#]);
    let err = extract_subset(
        &[&path],
        &manifest(&["c.jsonl:0", "c.jsonl:9"]),
        &dir.path().join("o"),
    )
    .unwrap_err();
    match err {
        Error::MissingId(id) => assert_eq!(id, "c.jsonl:9"),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn stream_then_extract_preserves_text_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let texts = [
        "plain",
        "ünïcödé \u{1F980}",
        "quote \" and \\ backslash",
        "line\nbreak",
        "",
    ];
    let docs: Vec<Document> = texts
        .iter()
        .enumerate()
        .map(|(i, t)| Document::new("orig", i as u64, *t))
        .collect();
    let path = dir.path().join("orig");
    write_documents(&docs, &path).unwrap();
    let read: Vec<Document> = stream_documents(&[&path]).map(Result::unwrap).collect();
    assert_eq!(
        read.iter().map(|d| d.text.as_str()).collect::<Vec<_>>(),
        texts
    );

    let out = dir.path().join("sub.jsonl");
    let ids: Vec<&str> = read.iter().rev().map(|d| d.id.as_str()).collect();
    extract_subset(&[&path], &manifest(&ids), &out).unwrap();
    let sub: Vec<Document> = stream_documents(&[&out]).map(Result::unwrap).collect();
    let rev: Vec<&str> = texts.iter().rev().copied().collect();
    assert_eq!(sub.iter().map(|d| d.text.as_str()).collect::<Vec<_>>(), rev);
    assert_eq!(sub.iter().map(|d| d.id.as_str()).collect::<Vec<_>>(), ids);
}
