use std::path::Path;
use std::process::{Command, Output};

fn sahash(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sahash"))
        .args(args)
        .output()
        .expect("spawn sahash")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth_small(dir: &Path) {
    let out = sahash(&[
        "synth", "--clusters", "3", "--per-cluster", "20", "--d", "8", "--spread", "0.05", "--out-dir", p(dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn no_arguments_prints_usage() {
    let out = sahash(&[]);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8_lossy(&out.stderr).to_string() + &String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("Usage"), "{text}");
}

#[test]
fn unknown_flag_is_named() {
    let out = sahash(&["train", "--frobnicate", "3"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--frobnicate"));
}

#[test]
fn bad_choice_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    synth_small(dir.path());
    let f = dir.path().join("features.sahf");
    let out = sahash(&["train", "--features", p(&f), "--pic", "pic7", "--out-dir", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn smoke_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_small(&d.join("data"));
    let f = d.join("data/features.sahf");
    let l = d.join("data/labels.sahl");
    let s = d.join("data/split.txt");

    let out = sahash(&["graph", "--features", p(&f), "--labels", p(&l), "--split", p(&s), "--out-dir", p(&d.join("g"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = sahash(&["train", "--features", p(&f), "--labels", p(&l), "--split", p(&s), "--out-dir", p(&d.join("t"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ck = d.join("t/checkpoint.sahc");
    let out = sahash(&[
        "eval", "--checkpoint", p(&ck), "--features", p(&f), "--labels", p(&l), "--split", p(&s), "--pr-rank", "10",
        "--out-dir", p(&d.join("e")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    for file in ["features.sahf", "labels.sahl", "split.txt", "manifest.json"] {
        assert!(d.join("data").join(file).is_file(), "data/{file}");
    }
    for file in ["graph.sahw", "graph.csv", "manifest.json"] {
        assert!(d.join("g").join(file).is_file(), "g/{file}");
    }
    for file in ["report.csv", "rounds.csv", "checkpoint.sahc", "graph.sahw", "manifest.json"] {
        assert!(d.join("t").join(file).is_file(), "t/{file}");
    }
    for file in ["metrics.json", "pr_curve.csv", "precision_curve.csv", "codes.sahb", "pr_by_rank.csv", "manifest.json"] {
        assert!(d.join("e").join(file).is_file(), "e/{file}");
    }

    let rounds = std::fs::read_to_string(d.join("t/rounds.csv")).unwrap();
    assert!(rounds.starts_with("round,mu,sigma,m,n_plus,flipped,f_w\n"));
    assert_eq!(rounds.lines().count(), 1 + 1 + 3);
    let report = std::fs::read_to_string(d.join("t/report.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 30);

    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("e/metrics.json")).unwrap()).unwrap();
    let map = metrics["map"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&map));
    assert_eq!(metrics["bits"], 64);

    let codes = sahash::retrieval::load_codes(d.join("e/codes.sahb")).unwrap();
    assert_eq!((codes.n(), codes.l()), (60, 64));
    let pr = std::fs::read_to_string(d.join("e/pr_curve.csv")).unwrap();
    assert_eq!(pr.lines().count(), 1 + 21);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("t/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["k1"], 2);
    assert_eq!(manifest["inputs"]["features"]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_small(&d.join("data"));
    let cfg = d.join("run.cfg");
    std::fs::write(&cfg, "# small run\nbits = 8\nhidden = 16\nepochs = 2\nrounds = 1\npic = pic0\n").unwrap();
    let f = d.join("data/features.sahf");
    let out = sahash(&[
        "--config", p(&cfg), "train", "--features", p(&f), "--bits", "12", "--out-dir", p(&d.join("t")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("t/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["bits"], 12);
    assert_eq!(manifest["config"]["hidden"], 16);
    assert_eq!(manifest["config"]["pic"], "pic0");
    assert_eq!(manifest["config"]["n_train"], 60);

    std::fs::write(&cfg, "bitz = 8\n").unwrap();
    let out = sahash(&["--config", p(&cfg), "train", "--features", p(&f), "--out-dir", p(&d.join("t2"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bitz"));
}

#[test]
fn format_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.sahf");
    std::fs::write(&bad, b"junkjunkjunk").unwrap();
    let out = sahash(&["graph", "--features", p(&bad), "--out-dir", p(&dir.path().join("g"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));

    let out = sahash(&["graph", "--features", p(&dir.path().join("missing.sahf")), "--out-dir", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn mismatched_checkpoint_dimension_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_small(&d.join("a"));
    let out = sahash(&["synth", "--clusters", "3", "--per-cluster", "20", "--d", "6", "--out-dir", p(&d.join("b"))]);
    assert!(out.status.success());
    let out = sahash(&[
        "train", "--features", p(&d.join("a/features.sahf")), "--bits", "8", "--hidden", "8", "--epochs", "1",
        "--rounds", "1", "--out-dir", p(&d.join("t")),
    ]);
    assert!(out.status.success());
    let out = sahash(&[
        "eval", "--checkpoint", p(&d.join("t/checkpoint.sahc")), "--features", p(&d.join("b/features.sahf")),
        "--labels", p(&d.join("b/labels.sahl")), "--split", p(&d.join("b/split.txt")), "--out-dir", p(&d.join("e")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn non_finite_loss_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    synth_small(&dir.path().join("data"));
    let f = dir.path().join("data/features.sahf");
    let out = sahash(&[
        "train", "--features", p(&f), "--lambda", "1e308", "--epochs", "1", "--rounds", "1", "--out-dir",
        p(&dir.path().join("t")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite"));
    // the manifest precedes compute, so it exists even for a failed run
    assert!(dir.path().join("t/manifest.json").is_file());
}

#[test]
fn infeasible_hyperparameters_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    synth_small(&dir.path().join("data"));
    let f = dir.path().join("data/features.sahf");
    let out = sahash(&["train", "--features", p(&f), "--k1", "500", "--out-dir", p(&dir.path().join("t"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("k1"));
}

#[test]
fn ablate_writes_every_cell() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_small(&d.join("data"));
    let out = sahash(&[
        "ablate", "--features", p(&d.join("data/features.sahf")), "--labels", p(&d.join("data/labels.sahl")),
        "--split", p(&d.join("data/split.txt")), "--bits", "8", "--hidden", "16", "--epochs", "2", "--rounds", "2",
        "--grid", "pic0,picminus", "--and", "on,off", "--out-dir", p(&d.join("ab")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(d.join("ab/ablation.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[0].starts_with("pic0,on,"));
    assert!(rows[3].starts_with("picminus,off,"));
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    synth_small(&dir.path().join("a"));
    synth_small(&dir.path().join("b"));
    for file in ["features.sahf", "labels.sahl", "split.txt"] {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file}");
    }
}
