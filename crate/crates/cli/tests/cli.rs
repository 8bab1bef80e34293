use std::path::Path;
use std::process::{Command, Output};

fn t23daqa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_t23daqa"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = t23daqa(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn synth(dir: &Path, assets: &str) -> String {
    let data = dir.join("data").to_string_lossy().into_owned();
    ok(&[
        "synth",
        "--out",
        &data,
        "--assets",
        assets,
        "--frames",
        "12",
        "--resolution",
        "16",
        "--subjects",
        "6",
    ]);
    data
}

#[test]
fn bad_ratio_and_missing_files_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "10");
    let manifest = format!("{data}/manifest.jsonl");
    let out_dir = dir.path().join("s").to_string_lossy().into_owned();
    for ratio in ["4-1", "0:1", "x:1"] {
        let out = t23daqa(&[
            "make-splits",
            "--manifest",
            &manifest,
            "--ratio",
            ratio,
            "--out",
            &out_dir,
        ]);
        assert!(!out.status.success(), "ratio {ratio} accepted");
        assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    }
    let out = t23daqa(&[
        "evaluate",
        "--pred",
        "/nonexistent.jsonl",
        "--mos",
        "/nonexistent.jsonl",
    ]);
    assert!(!out.status.success());
}

#[test]
fn splits_files_partition_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "15");
    let out_dir = dir.path().join("splits");
    ok(&[
        "make-splits",
        "--manifest",
        &format!("{data}/manifest.jsonl"),
        "--splits",
        "4",
        "--out",
        &out_dir.to_string_lossy(),
    ]);
    for k in 0..4 {
        let s = t23daqa::SplitSpec::load(&out_dir.join(format!("split{k}.json"))).unwrap();
        assert_eq!(s.test_ids.len(), 3);
        assert_eq!(s.train_ids.len() + s.test_ids.len(), 15);
    }
    assert!(!out_dir.join("split4.json").exists());
}

#[test]
fn evaluate_oracle_scores_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "10");
    let mos = dir.path().join("mos.jsonl").to_string_lossy().into_owned();
    ok(&[
        "process-ratings",
        "--ratings",
        &format!("{data}/ratings.csv"),
        "--out",
        &mos,
    ]);

    // MOS scored against itself
    let records = t23daqa::dataset::load_mos(Path::new(&mos)).unwrap();
    let scores: Vec<_> = records
        .iter()
        .map(|m| t23daqa::ScoreTriple::new(&m.asset_id, m.mos))
        .collect();
    let pred = dir.path().join("pred.jsonl");
    t23daqa::dataset::write_scores(&pred, &scores).unwrap();
    let eval_path = dir.path().join("eval.json");
    let table = ok(&[
        "evaluate",
        "--pred",
        &pred.to_string_lossy(),
        "--mos",
        &mos,
        "--out",
        &eval_path.to_string_lossy(),
    ]);
    assert!(table.contains("correspondence"));
    let eval: t23daqa::metrics::Evaluation =
        serde_json::from_str(&std::fs::read_to_string(&eval_path).unwrap()).unwrap();
    for d in &eval.dims {
        assert!((d.srcc - 1.0).abs() < 1e-12);
        assert!((d.krcc - 1.0).abs() < 1e-12);
    }

    let plots = dir.path().join("plots");
    let listing = ok(&[
        "plot",
        "--mos",
        &mos,
        "--manifest",
        &format!("{data}/manifest.jsonl"),
        "--out",
        &plots.to_string_lossy(),
    ]);
    assert_eq!(listing.lines().count(), 5);
}
