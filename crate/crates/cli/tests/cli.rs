use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use protgo::metrics::{binarize, confusion, f1, mcc};
use protgo::{Checkpoint, Dataset};
use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn protgo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_protgo"))
        .arg("--quiet")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> Output {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn build(dir: &Path, ns: &str, name: &str) -> PathBuf {
    let out = dir.join(name);
    ok(protgo(&[
        "build-dataset",
        "--obo",
        s(&fixture("mini.obo")),
        "--annotations",
        s(&fixture("annotations.tsv")),
        "--fasta",
        s(&fixture("proteins.fasta")),
        "--namespace",
        ns,
        "--out",
        s(&out),
        "--max-len",
        "64",
    ]));
    out
}

const SMALL: [&str; 8] = [
    "--embed-dim",
    "6",
    "--conv-filters",
    "4",
    "--gru-hidden",
    "5",
    "--dense-hidden",
    "8",
];

fn train(dataset: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["--deterministic", "train", "--dataset", s(dataset), "--out", s(out)];
    args.extend(SMALL);
    args.extend(extra);
    protgo(&args)
}

fn log_rows(ckpt: &Path) -> Vec<Vec<f64>> {
    let text = std::fs::read_to_string(format!("{}.log.tsv", ckpt.display())).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("epoch\ttrain_loss\tval_loss\tval_f1\tval_mcc\tlearning_rate")
    );
    lines
        .map(|l| l.split('\t').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn inspect_matches_golden() {
    let out = ok(protgo(&["inspect-ontology", "--obo", s(&fixture("mini.obo"))]));
    let golden = std::fs::read_to_string(fixture("mini.inspect.golden")).unwrap();
    assert_eq!(String::from_utf8(out.stdout).unwrap(), golden);
}

#[test]
fn inspect_single_namespace() {
    let out = ok(protgo(&["inspect-ontology", "--obo", s(&fixture("mini.obo")), "--namespace", "MF"]));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("# molecular_function root GO:0003674"));
    assert!(!text.contains("biological_process"));
}

#[test]
fn cyclic_ontology_exits_2() {
    let out = protgo(&["inspect-ontology", "--obo", s(&fixture("cyclic.obo"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("cycle"));
}

#[test]
fn manifest_matches_golden() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("bp.ds");
    ok(protgo(&[
        "build-dataset",
        "--obo",
        s(&fixture("mini.obo")),
        "--annotations",
        s(&fixture("annotations.tsv")),
        "--fasta",
        s(&fixture("proteins.fasta")),
        "--namespace",
        "BP",
        "--out",
        s(&out),
        "--max-len",
        "200",
    ]));
    let manifest = std::fs::read_to_string(dir.path().join("bp.ds.manifest.toml")).unwrap();
    assert_eq!(manifest, std::fs::read_to_string(fixture("bp.manifest.golden")).unwrap());
    let ds = Dataset::load(&out).unwrap();
    let ids: Vec<&str> = ds.protein_ids().iter().map(String::as_str).collect();
    assert_eq!(ids, ["P00001", "P00002", "P00003", "P00005", "P00006", "P00010"]);
}

#[test]
fn missing_column_names_it() {
    let dir = TempDir::new().unwrap();
    let out = protgo(&[
        "build-dataset",
        "--obo",
        s(&fixture("mini.obo")),
        "--annotations",
        s(&fixture("annotations.tsv")),
        "--fasta",
        s(&fixture("proteins.fasta")),
        "--namespace",
        "BP",
        "--out",
        s(&dir.path().join("x.ds")),
        "--evidence-column",
        "EVIDENCE",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("\"EVIDENCE\""), "{}", stderr(&out));
}

#[test]
fn empty_join_exits_2() {
    let dir = TempDir::new().unwrap();
    let out = protgo(&[
        "build-dataset",
        "--obo",
        s(&fixture("mini.obo")),
        "--annotations",
        s(&fixture("annotations.tsv")),
        "--fasta",
        s(&fixture("proteins.fasta")),
        "--namespace",
        "CC",
        "--out",
        s(&dir.path().join("cc.ds")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn rebuild_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    let a = build(dir.path(), "BP", "a.ds");
    let b = build(dir.path(), "BP", "b.ds");
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn train_writes_one_finite_row_per_epoch() {
    let dir = TempDir::new().unwrap();
    let ds = build(dir.path(), "BP", "bp.ds");
    let ckpt = dir.path().join("bp.ckpt");
    ok(train(&ds, &ckpt, &["--epochs", "5"]));
    let rows = log_rows(&ckpt);
    assert_eq!(rows.len(), 5);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r[0], (i + 1) as f64);
        assert!(r[1].is_finite() && r[2].is_finite());
    }
    let cfg = std::fs::read_to_string(format!("{}.config.toml", ckpt.display())).unwrap();
    assert!(cfg.contains("epochs = 5"));
}

#[test]
fn same_seed_same_bytes() {
    let dir = TempDir::new().unwrap();
    let ds = build(dir.path(), "BP", "bp.ds");
    let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    for p in [&a, &b] {
        ok(train(&ds, p, &["--epochs", "3", "--seed", "5", "--batch-size", "2"]));
    }
    let read = |p: &Path, suffix: &str| std::fs::read(format!("{}{suffix}", p.display())).unwrap();
    assert_eq!(read(&a, ""), read(&b, ""));
    assert_eq!(read(&a, ".log.tsv"), read(&b, ".log.tsv"));
}

#[test]
fn resolved_config_reproduces_the_run() {
    let dir = TempDir::new().unwrap();
    let ds = build(dir.path(), "BP", "bp.ds");
    let a = dir.path().join("a.ckpt");
    ok(train(&ds, &a, &["--epochs", "2", "--seed", "9"]));
    let b = dir.path().join("b.ckpt");
    let cfg = format!("{}.config.toml", a.display());
    ok(protgo(&["--config", &cfg, "train", "--dataset", s(&ds), "--out", s(&b)]));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn zero_learning_rate_keeps_loss_flat() {
    let dir = TempDir::new().unwrap();
    let ds = build(dir.path(), "BP", "bp.ds");
    let ckpt = dir.path().join("flat.ckpt");
    // dropout off and one batch per epoch, so nothing varies between epochs
    ok(train(
        &ds,
        &ckpt,
        &["--epochs", "4", "--lr", "0", "--dropout", "0", "--batch-size", "100"],
    ));
    // val_loss still moves as the batch-norm running averages converge
    let rows = log_rows(&ckpt);
    for r in &rows[1..] {
        assert!((r[1] - rows[0][1]).abs() <= 1e-6 * rows[0][1], "{rows:?}");
    }
}

fn trained(dir: &Path) -> (PathBuf, PathBuf) {
    let ds = build(dir, "BP", "bp.ds");
    let ckpt = dir.join("bp.ckpt");
    ok(train(&ds, &ckpt, &["--epochs", "2", "--lr", "1e-2"]));
    (ds, ckpt)
}

#[test]
fn evaluate_report_matches_scoring_oracle() {
    let dir = TempDir::new().unwrap();
    let (ds_path, ckpt_path) = trained(dir.path());
    let report = dir.path().join("report.txt");
    ok(protgo(&[
        "evaluate",
        "--checkpoint",
        s(&ckpt_path),
        "--dataset",
        s(&ds_path),
        "--threshold",
        "0.5",
        "--out",
        s(&report),
        "--tsv",
    ]));
    let text = std::fs::read_to_string(&report).unwrap();

    // independent forward, threshold and count
    let ckpt = Checkpoint::load(&ckpt_path).unwrap();
    let ds = Dataset::load(&ds_path).unwrap();
    let mut probs = Vec::new();
    for r in 0..ds.len() {
        probs.extend(ckpt.model.predict_batch(&ds.batch(&[r]).unwrap()).unwrap());
    }
    let targets: Vec<u8> = (0..ds.len()).flat_map(|r| ds.labels(r).to_vec()).collect();
    let c = confusion(&binarize(&probs, 0.5), &targets, ds.num_labels()).unwrap();
    let m = c.micro;
    assert!(text.contains(&format!("micro_counts\ttp={} fp={} tn={} fn={}", m.tp, m.fp, m.tn, m.fn_)));
    assert!(text.contains(&format!("micro_f1\t{:.6}", f1(&m))));
    assert!(text.contains(&format!("micro_mcc\t{:.6}", mcc(&m))));
    let tsv = std::fs::read_to_string(dir.path().join("report.txt.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 1 + ds.num_labels());
    for (j, line) in tsv.lines().skip(1).enumerate() {
        let p = c.per_label[j];
        let want = format!("\t{}\t{}\t{}\t{}\t", p.tp, p.fp, p.tn, p.fn_);
        assert!(line.contains(&want), "{line} vs {want}");
    }
}

#[test]
fn threshold_sweep_writes_one_report_each() {
    let dir = TempDir::new().unwrap();
    let (ds, ckpt) = trained(dir.path());
    let report = dir.path().join("sweep.txt");
    ok(protgo(&[
        "evaluate",
        "--checkpoint",
        s(&ckpt),
        "--dataset",
        s(&ds),
        "--threshold",
        "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9",
        "--out",
        s(&report),
    ]));
    for t in 1..=9 {
        let path = dir.path().join(format!("sweep.t0.{t}0.txt"));
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(&format!("threshold\t0.{t}000\n")));
    }
}

#[test]
fn dimension_mismatch_exits_2() {
    let dir = TempDir::new().unwrap();
    let (_, ckpt) = trained(dir.path());
    let mf = build(dir.path(), "MF", "mf.ds");
    let out = protgo(&["evaluate", "--checkpoint", s(&ckpt), "--dataset", s(&mf)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("dimension mismatch"));
}

#[test]
fn truncated_checkpoint_exits_2() {
    let dir = TempDir::new().unwrap();
    let (ds, ckpt) = trained(dir.path());
    let bytes = std::fs::read(&ckpt).unwrap();
    std::fs::write(&ckpt, &bytes[..bytes.len() / 2]).unwrap();
    let out = protgo(&["evaluate", "--checkpoint", s(&ckpt), "--dataset", s(&ds)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn predict_reports_per_sequence_errors() {
    let dir = TempDir::new().unwrap();
    let (_, ckpt) = trained(dir.path());
    let out = ok(protgo(&[
        "predict",
        "--checkpoint",
        s(&ckpt),
        "--fasta",
        s(&fixture("proteins.fasta")),
        "--threshold",
        "0",
    ]));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("# P00009\terror\t"));
    // threshold 0 lists every term of the three-term dictionary
    assert!(text.contains("# P00001\t3 terms\tthreshold 0"));
    for line in text.lines().filter(|l| !l.starts_with('#')) {
        let f: Vec<&str> = line.split('\t').collect();
        assert_eq!(f.len(), 4);
        assert!(f[1].starts_with("GO:"));
    }
}

#[test]
fn empty_prediction_is_success() {
    let dir = TempDir::new().unwrap();
    let (_, ckpt) = trained(dir.path());
    let out = ok(protgo(&[
        "predict",
        "--checkpoint",
        s(&ckpt),
        "--fasta",
        s(&fixture("proteins.fasta")),
        "--threshold",
        "1",
        "--json",
    ]));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let first = &v.as_array().unwrap()[0];
    assert_eq!(first["status"], "ok");
    assert_eq!(first["terms"].as_array().unwrap().len(), 0);

    let forced = ok(protgo(&[
        "predict",
        "--checkpoint",
        s(&ckpt),
        "--fasta",
        s(&fixture("proteins.fasta")),
        "--threshold",
        "1",
        "--min-one",
    ]));
    assert!(String::from_utf8(forced.stdout).unwrap().contains("# P00001\t1 terms"));
}

#[test]
fn unreadable_fasta_exits_2() {
    let dir = TempDir::new().unwrap();
    let (_, ckpt) = trained(dir.path());
    let out = protgo(&["predict", "--checkpoint", s(&ckpt), "--fasta", s(&dir.path().join("none.fasta"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_config_exits_2() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[model]\nwidth = 3\n").unwrap();
    let out = protgo(&["--config", s(&cfg), "inspect-ontology", "--obo", s(&fixture("mini.obo"))]);
    assert_eq!(out.status.code(), Some(2));
}
