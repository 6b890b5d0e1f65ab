mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::{prose, vocab, write_texts};

fn dsir(args: &[&str], envs: &[(&str, &str)]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsir"))
        .args(args)
        .env_remove("DSIR_WORKERS")
        .envs(envs.iter().copied())
        .output()
        .unwrap()
}

fn ok(out: &Output) -> serde_json::Value {
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn corpora(dir: &Path) -> (String, String) {
    let g = vocab("g", 300);
    let d = vocab("bio", 300);
    let g: Vec<&str> = g.iter().map(String::as_str).collect();
    let d: Vec<&str> = d.iter().map(String::as_str).collect();
    let raw: Vec<String> = (0..30)
        .map(|i| prose(i, 60, if i % 5 == 0 { &d } else { &g }))
        .collect();
    let target: Vec<String> = (0..10).map(|i| prose(50 + i, 60, &d)).collect();
    let raw = write_texts(dir, "raw.jsonl", &raw);
    let target = write_texts(dir, "target.jsonl", &target);
    (raw.display().to_string(), target.display().to_string())
}

#[test]
fn help_lists_every_subcommand() {
    let out = dsir(&["--help"], &[]);
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in [
        "fit",
        "weights",
        "select",
        "extract",
        "kl-report",
        "train-classifier",
        "score",
        "filter",
        "run-all",
    ] {
        assert!(text.contains(cmd), "missing {cmd}");
    }
}

#[test]
fn unknown_method_is_a_usage_error() {
    let out = dsir(
        &[
            "select", "--input", "w.tsv", "--k", "1", "--method", "best", "--out", "m.json",
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("best"));
}

#[test]
fn fatal_errors_exit_nonzero_with_reason() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.json").display().to_string();
    let out = dsir(
        &[
            "extract",
            "--raw",
            "/nonexistent/raw.jsonl",
            "--manifest",
            &m,
            "--out",
            &m,
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn stages_chain_and_report_json() {
    let dir = tempfile::tempdir().unwrap();
    let (raw, target) = corpora(dir.path());
    let p = |name: &str| dir.path().join(name).display().to_string();
    let common = ["--num-buckets", "1024", "--seed", "5"];

    let mut args = vec!["fit", "--raw", &raw, "--target", &target];
    let (tm, rm) = (p("t.model"), p("r.model"));
    args.extend(["--target-model", &tm, "--raw-model", &rm]);
    args.extend(common);
    let fit = ok(&dsir(&args, &[]));
    assert_eq!(fit["stage"], "fit");
    assert_eq!(fit["raw"]["documents"], 30);

    let w = p("w.tsv");
    let mut args = vec![
        "weights",
        "--raw",
        &raw,
        "--target-model",
        &tm,
        "--raw-model",
        &rm,
        "--out",
        &w,
    ];
    args.extend(common);
    let weights = ok(&dsir(&args, &[("DSIR_WORKERS", "3")]));
    assert_eq!(weights["rows"], 30);
    assert!(fs::read_to_string(&w)
        .unwrap()
        .starts_with("#dsir-weights\tseed=5\t"));

    // models fitted under other settings are refused
    let args = [
        "weights",
        "--raw",
        &raw,
        "--target-model",
        &tm,
        "--raw-model",
        &rm,
        "--out",
        &w,
    ];
    assert!(!dsir(&args, &[]).status.success());

    let m = p("m.json");
    let sel = ok(&dsir(
        &["select", "--input", &w, "--k", "6", "--out", &m],
        &[("SOURCE_DATE_EPOCH", "0")],
    ));
    assert_eq!(sel["selected"], 6);
    assert_eq!(sel["seed"], 5);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&m).unwrap()).unwrap();
    assert_eq!(manifest["created_at"], "1970-01-01T00:00:00Z");

    let sub = p("sub.jsonl");
    assert_eq!(
        ok(&dsir(
            &["extract", "--raw", &raw, "--manifest", &m, "--out", &sub],
            &[]
        ))["written"],
        6
    );

    let report = p("kl.csv");
    let mut args = vec![
        "kl-report",
        "--target",
        &target,
        "--raw",
        &raw,
        "--selected",
        &sub,
        "--selected",
        &raw,
    ];
    args.extend(["--out", &report]);
    args.extend(common);
    let out = dsir(&args, &[]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = fs::read_to_string(&report).unwrap();
    let rows: Vec<Vec<f64>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').skip(2).map(|x| x.parse().unwrap()).collect())
        .collect();
    assert!(rows[0][2] > 0.0, "selection should reduce KL: {csv}");
    assert_eq!(rows[1][2], 0.0);
}

#[test]
fn config_file_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let (raw, target) = corpora(dir.path());
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"featurizer": {"num_buckets": 256, "orders": [1], "lowercase": true, "hash_seed": 3}, "sample_cap": 20}"#).unwrap();
    let cfg = cfg.display().to_string();
    let p = |name: &str| dir.path().join(name).display().to_string();
    let (tm, rm) = (p("t"), p("r"));
    let fit = ok(&dsir(
        &[
            "fit",
            "--config",
            &cfg,
            "--raw",
            &raw,
            "--target",
            &target,
            "--target-model",
            &tm,
            "--raw-model",
            &rm,
        ],
        &[],
    ));
    assert_eq!(fit["raw"]["sampled"], 20);

    // overriding a shaping setting changes the digest, so weights refuse the models
    let w = p("w");
    let args = [
        "weights",
        "--config",
        &cfg,
        "--sample-cap",
        "21",
        "--raw",
        &raw,
        "--target-model",
        &tm,
        "--raw-model",
        &rm,
        "--out",
        &w,
    ];
    let out = dsir(&args, &[]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("digest"));

    fs::write(
        dir.path().join("bad.json"),
        r#"{"sample_cap": 1, "bogus": true}"#,
    )
    .unwrap();
    let bad = p("bad.json");
    assert!(!dsir(
        &[
            "fit",
            "--config",
            &bad,
            "--raw",
            &raw,
            "--target",
            &target,
            "--target-model",
            &tm,
            "--raw-model",
            &rm
        ],
        &[]
    )
    .status
    .success());
}

#[test]
fn classifier_and_filter_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let (raw, target) = corpora(dir.path());
    let p = |name: &str| dir.path().join(name).display().to_string();
    let clf = p("clf.bin");
    let train = ok(&dsir(
        &[
            "train-classifier",
            "--raw",
            &raw,
            "--target",
            &target,
            "--out",
            &clf,
            "--epochs",
            "10",
            "--num-buckets",
            "1024",
        ],
        &[],
    ));
    assert_eq!(train["target_examples"], 10);
    let scores = p("s.tsv");
    let score = ok(&dsir(
        &[
            "score",
            "--raw",
            &raw,
            "--classifier",
            &clf,
            "--scores-out",
            &scores,
            "--num-buckets",
            "1024",
        ],
        &[],
    ));
    assert_eq!(score["rows"], 30);
    let h = ok(&dsir(
        &[
            "select",
            "--input",
            &scores,
            "--method",
            "heuristic",
            "--out",
            &p("h.json"),
        ],
        &[],
    ));
    assert_eq!(h["method"], "heuristic");
    let t = ok(&dsir(
        &[
            "select",
            "--input",
            &scores,
            "--method",
            "topk_heuristic",
            "--k",
            "5",
            "--out",
            &p("t.json"),
        ],
        &[],
    ));
    assert_eq!(t["selected"], 5);

    let out = p("kept.jsonl");
    let log = p("drops.jsonl");
    let f = ok(&dsir(
        &[
            "filter",
            "--input",
            &raw,
            "--out",
            &out,
            "--drop-log",
            &log,
            "--min-words",
            "61",
        ],
        &[],
    ));
    assert_eq!(f["kept"], 0);
    assert_eq!(f["dropped"]["too_short"], 30);
    assert_eq!(fs::read_to_string(&log).unwrap().lines().count(), 30);
}

#[test]
fn run_all_is_worker_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let (raw, target) = corpora(dir.path());
    let mut manifests = Vec::new();
    for workers in ["1", "8"] {
        let work = dir
            .path()
            .join(format!("run{workers}"))
            .display()
            .to_string();
        let args = [
            "run-all",
            "--raw",
            &raw,
            "--target",
            &target,
            "--k",
            "5",
            "--work-dir",
            &work,
            "--workers",
            workers,
        ];
        let s = ok(&dsir(&args, &[("SOURCE_DATE_EPOCH", "1")]));
        assert_eq!(s["selected"], 5);
        manifests.push(fs::read(Path::new(&work).join("manifest.json")).unwrap());
    }
    assert_eq!(manifests[0], manifests[1]);
}
