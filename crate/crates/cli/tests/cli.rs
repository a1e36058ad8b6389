use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gyronet::embed::EmbeddingFile;
use gyronet::geometry::{hyperboloid_distance, poincare_distance, HyperboloidPoint, PoincarePoint};
use sha2::{Digest, Sha256};

fn gyronet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gyronet"))
        .args(args)
        .env("GYRONET_LOG", "error")
        .output()
        .expect("spawn gyronet")
}

fn ok(args: &[&str]) -> Output {
    let out = gyronet(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn sha(path: &Path) -> String {
    let digest = Sha256::digest(fs::read(path).unwrap());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &[&str] = &[
    "--set", "classes=3", "--set", "composites=1", "--set", "per_class=10", "--set", "vocab_size=40",
    "--set", "layers=1", "--set", "heads=2", "--set", "head_dim=3", "--set", "emb_epochs=2", "--dim", "6",
    "--epochs", "4", "--seed", "11",
];

/// Runs every data-producing command once into `dir`; returns the outputs.
fn pipeline(dir: &Path) -> Vec<PathBuf> {
    let f = |n: &str| dir.join(n);
    let (d, e, m, ev, p) = (f("d.tsv"), f("e.txt"), f("m.bin"), f("ev.json"), f("p.txt"));
    ok(&[&["gen-data"], SMALL, &["--out", s(&d)]].concat());
    ok(&[&["train-embeddings"], SMALL, &["--dataset", s(&d), "--out", s(&e)]].concat());
    ok(&[&["train-classifier"], SMALL, &["--dataset", s(&d), "--embeddings", s(&e), "--out", s(&m)]].concat());
    ok(&[&["evaluate"], SMALL, &["--dataset", s(&d), "--model", s(&m), "--out", s(&ev)]].concat());
    ok(&["convert", "--embeddings", s(&e), "--geometry", "poincare", "--out", s(&p)]);
    vec![d, e, m, f("m.bin.metrics.json"), ev, p]
}

#[test]
fn repeated_runs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (pa, pb) = (pipeline(a.path()), pipeline(b.path()));
    for (x, y) in pa.iter().zip(&pb) {
        assert_eq!(sha(x), sha(y), "{} differs between runs", x.file_name().unwrap().to_string_lossy());
    }
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(&pa[3]).unwrap()).unwrap();
    for key in ["accuracy", "cross_entropy", "epochs", "geometry", "dims", "seed"] {
        assert!(metrics.get(key).is_some(), "metrics lack {key}");
    }
}

#[test]
fn geometry_check_lists_suites_and_catches_the_fault() {
    let clean = ok(&["geometry-check", "--seed", "3"]);
    let text = String::from_utf8(clean.stdout).unwrap();
    let names: Vec<&str> = text.lines().filter(|l| l.contains(" value=")).map(|l| l.split_whitespace().next().unwrap()).collect();
    let mut uniq = names.clone();
    uniq.sort();
    uniq.dedup();
    assert_eq!(uniq.len(), names.len(), "suite listed twice: {names:?}");
    assert!(names.contains(&"isometry"));
    assert!(!text.contains("FAIL"));

    let faulty = gyronet(&["geometry-check", "--seed", "3", "--inject-fault"]);
    assert!(!faulty.status.success());
    let text = String::from_utf8(faulty.stdout).unwrap();
    let failed: Vec<&str> = text.lines().filter(|l| l.contains(" FAIL ")).collect();
    assert_eq!(failed.len(), 1, "{text}");
    assert!(failed[0].starts_with("isometry"));
}

fn rows(path: &Path) -> EmbeddingFile {
    EmbeddingFile::read_from(fs::read(path).unwrap().as_slice()).unwrap()
}

#[test]
fn convert_round_trip_and_distances() {
    let dir = tempfile::tempdir().unwrap();
    let f = |n: &str| dir.path().join(n);
    ok(&[&["gen-data"][..], SMALL, &["--out", s(&f("d.tsv"))]].concat());
    ok(&[&["train-embeddings"][..], SMALL, &["--dataset", s(&f("d.tsv")), "--out", s(&f("h.txt"))]].concat());
    ok(&["convert", "--embeddings", s(&f("h.txt")), "--geometry", "poincare", "--out", s(&f("p.txt"))]);
    ok(&["convert", "--embeddings", s(&f("p.txt")), "--geometry", "hyperboloid", "--out", s(&f("h2.txt"))]);

    let (h, p, h2) = (rows(&f("h.txt")), rows(&f("p.txt")), rows(&f("h2.txt")));
    assert_eq!(h.tokens, p.tokens);
    assert_eq!(h.tokens, h2.tokens);
    let drift = h.rows.data().iter().zip(h2.rows.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(drift < 1e-9, "round-trip drift {drift:e}");

    let hp: Vec<HyperboloidPoint> = h.rows.to_rows().into_iter().map(|r| HyperboloidPoint::new(r).unwrap()).collect();
    let pp: Vec<PoincarePoint> = p.rows.to_rows().into_iter().map(|r| PoincarePoint::new(r, 1.0).unwrap()).collect();
    let mut worst = 0.0f64;
    for i in 0..hp.len() {
        for j in (i + 1)..hp.len() {
            let dh = hyperboloid_distance(&hp[i], &hp[j]).unwrap();
            let dp = poincare_distance(&pp[i], &pp[j]).unwrap();
            worst = worst.max((dh - dp).abs());
        }
    }
    assert!(worst < 1e-6, "distance error {worst:e}");
}

#[test]
fn euclidean_files_do_not_convert() {
    let dir = tempfile::tempdir().unwrap();
    let f = |n: &str| dir.path().join(n);
    ok(&[&["gen-data"][..], SMALL, &["--out", s(&f("d.tsv"))]].concat());
    ok(&[&["train-embeddings"][..], SMALL, &["--geometry", "euclidean", "--dataset", s(&f("d.tsv")), "--out", s(&f("e.txt"))]]
        .concat());
    let out = gyronet(&["convert", "--embeddings", s(&f("e.txt")), "--geometry", "poincare", "--out", s(&f("x.txt"))]);
    assert!(!out.status.success());
}

#[test]
fn errors_exit_nonzero_and_name_the_location() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.tsv");
    fs::write(&bad, "好\ta\nno tab here\n").unwrap();
    let out = gyronet(&["train-embeddings", "--dataset", s(&bad)]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.tsv:2"), "{err}");

    let corpus = dir.path().join("c.txt");
    fs::write(&corpus, b"ab\xFFcd").unwrap();
    let out = gyronet(&["train-embeddings", "--corpus", s(&corpus)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("offset 2"));

    assert!(!gyronet(&["gen-data", "--set", "nonsense=1"]).status.success());
    assert!(!gyronet(&["train-classifier", "--dataset", s(&bad)]).status.success());
}

#[test]
fn preset_then_file_then_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# overrides the preset\ndropout=0.1\nepochs=7\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_gyronet"))
        .args(["gen-data", "--preset", "hyp-c2v-100-drop30", "--config", s(&cfg), "--epochs", "9"])
        .args(["--set", "per_class=2", "--out", s(&dir.path().join("d.tsv"))])
        .env("GYRONET_LOG", "info")
        .output()
        .unwrap();
    assert!(out.status.success());
    let log = String::from_utf8_lossy(&out.stderr);
    for line in ["dim=100", "heads=16", "dropout=0.1", "epochs=9"] {
        assert!(log.lines().any(|l| l.trim_end().ends_with(line)), "missing {line} in resolved config");
    }
}
