use std::path::Path;
use std::process::{Command, Output};

fn stepimpute(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stepimpute"))
        .current_dir(dir)
        .args(["--quiet", "--seed", "5"])
        .args(args)
        .env_remove("STEPIMPUTE_SEED")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = stepimpute(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn small_cohort(dir: &Path) {
    ok(dir, &["synth", "--participants", "3", "--weeks", "9", "--out", "cohort.csv"]);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(stepimpute(d, &["--help"]).status.code(), Some(0));
    assert_eq!(stepimpute(d, &["frobnicate"]).status.code(), Some(1));
    assert_eq!(stepimpute(d, &["split", "--cohort", "x.csv"]).status.code(), Some(1));
    assert_eq!(stepimpute(d, &["split", "--cohort", "missing.csv", "--out", "s.csv"]).status.code(), Some(2));
    std::fs::write(d.join("bad.csv"), "participant_id,hour_index\np,0\n").unwrap();
    let out = stepimpute(d, &["acf", "--cohort", "bad.csv", "--out", "a.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
    small_cohort(d);
    assert_eq!(stepimpute(d, &["impute", "--cohort", "cohort.csv", "--method", "nope", "--out", "i.csv"]).status.code(), Some(2));
}

#[test]
fn synth_writes_cohort_truth_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_cohort(d);
    for f in ["cohort.csv", "cohort.truth.csv", "cohort.manifest.json"] {
        assert!(d.join(f).exists(), "{f} missing");
    }
    let cohort = std::fs::read_to_string(d.join("cohort.csv")).unwrap();
    let truth = std::fs::read_to_string(d.join("cohort.truth.csv")).unwrap();
    assert_eq!(cohort.lines().count(), truth.lines().count());
    assert_eq!(cohort.lines().count(), 1 + 3 * 9 * 7 * 24);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("cohort.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "synth");
    assert_eq!(manifest["seed"], 5);
}

#[test]
fn zero_learning_rate_keeps_the_initial_weights() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_cohort(d);
    ok(
        d,
        &[
            "train", "--cohort", "cohort.csv", "--lr", "0", "--epochs", "2", "--max-instances-per-epoch", "300",
            "--out", "model.ckpt", "--save-init", "init.ckpt",
        ],
    );
    let trained = std::fs::read(d.join("model.ckpt")).unwrap();
    assert_eq!(trained, std::fs::read(d.join("init.ckpt")).unwrap());
    let log = std::fs::read_to_string(d.join("model.log.csv")).unwrap();
    // header, the untrained baseline, two epochs
    assert_eq!(log.lines().count(), 4);
}

#[test]
fn config_file_and_flags_layer() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_cohort(d);
    std::fs::write(d.join("cfg.json"), r#"{"d_k": 4, "epochs": 1, "lr": 0.5}"#).unwrap();
    ok(
        d,
        &[
            "--config", "cfg.json", "train", "--cohort", "cohort.csv", "--lr", "0.002", "--max-instances-per-epoch",
            "200", "--out", "m.ckpt",
        ],
    );
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("m.manifest.json")).unwrap()).unwrap();
    let hp = &m["hyperparameters"];
    assert_eq!(hp["d_k"], 4);
    assert_eq!(hp["epochs"], 1);
    assert_eq!(hp["lr"], 0.002);
    assert_eq!(m["config_file"], "cfg.json");
}

#[test]
fn seed_env_matches_flag() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_cohort(d);
    ok(d, &["split", "--cohort", "cohort.csv", "--out", "a.csv"]);
    let out = Command::new(env!("CARGO_BIN_EXE_stepimpute"))
        .current_dir(d)
        .args(["--quiet", "split", "--cohort", "cohort.csv", "--out", "b.csv"])
        .env("STEPIMPUTE_SEED", "5")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(std::fs::read(d.join("a.csv")).unwrap(), std::fs::read(d.join("b.csv")).unwrap());
    let out = Command::new(env!("CARGO_BIN_EXE_stepimpute"))
        .current_dir(d)
        .args(["--quiet", "--seed", "6", "split", "--cohort", "cohort.csv", "--out", "c.csv"])
        .env("STEPIMPUTE_SEED", "5")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_ne!(std::fs::read(d.join("a.csv")).unwrap(), std::fs::read(d.join("c.csv")).unwrap());
}

#[test]
fn evaluate_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_cohort(d);
    ok(
        d,
        &[
            "evaluate", "--cohort", "cohort.csv", "--truth", "cohort.truth.csv", "--methods",
            "zero,forward,median:dw_hd,knn:uniform:5", "--reference", "median:dw_hd", "--out-dir", "eval",
        ],
    );
    let e = d.join("eval");
    let summary = std::fs::read_to_string(e.join("summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert!(lines.next().unwrap().starts_with("method,macro_mae,ci95,micro_mae"));
    let methods: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(methods, ["zero", "forward", "median:dw_hd", "knn:uniform:5"]);
    let ttest = std::fs::read_to_string(e.join("ttest.csv")).unwrap();
    assert!(ttest.lines().skip(1).all(|l| l.split(',').nth(1) == Some("median:dw_hd")));
    let jsonl = std::fs::read_to_string(e.join("report.jsonl")).unwrap();
    for line in jsonl.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["kind"] == "method" || v["kind"] == "step_bin");
    }
    let preds = std::fs::read_to_string(e.join("predictions.csv")).unwrap();
    let n_preds = preds.lines().count() - 1;
    assert_eq!(n_preds % 4, 0);
    assert!(n_preds > 0);
    assert!(e.join("step_bins.csv").exists() && e.join("manifest.json").exists());
}

#[test]
fn impute_covers_missing_daytime_blocks() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_cohort(d);
    ok(d, &["impute", "--cohort", "cohort.csv", "--method", "median:hd", "--out", "filled.csv"]);
    let column = |r: &csv::StringRecord, h: &csv::StringRecord, name: &str| -> String {
        r[h.iter().position(|x| x == name).unwrap()].to_owned()
    };
    let mut cohort = csv::Reader::from_path(d.join("cohort.csv")).unwrap();
    let ch = cohort.headers().unwrap().clone();
    let mut want = Vec::new();
    let mut hour = std::collections::HashMap::<String, usize>::new();
    for r in cohort.records() {
        let r = r.unwrap();
        let id = column(&r, &ch, "participant_id");
        let t = hour.entry(id.clone()).or_default();
        let hod: u8 = column(&r, &ch, "hour_of_day").parse().unwrap();
        if column(&r, &ch, "wear_minutes") == "0" && (6..=22).contains(&hod) {
            want.push((id, t.to_string()));
        }
        *t += 1;
    }
    let mut preds = csv::Reader::from_path(d.join("filled.csv")).unwrap();
    let ph = preds.headers().unwrap().clone();
    let mut got = Vec::new();
    for r in preds.records() {
        let r = r.unwrap();
        assert_eq!(column(&r, &ph, "method"), "median:hour_of_day");
        let v: f64 = column(&r, &ph, "prediction").parse().unwrap();
        assert!((0.0..=60.0 * 1.5 * 400.0).contains(&v));
        got.push((column(&r, &ph, "participant_id"), column(&r, &ph, "hour_index")));
    }
    assert!(!want.is_empty());
    assert_eq!(got, want);
}

#[test]
fn acf_has_one_row_per_lag() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_cohort(d);
    ok(d, &["acf", "--cohort", "cohort.csv", "--max-lag", "48", "--out", "acf.csv"]);
    let text = std::fs::read_to_string(d.join("acf.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("lag,acf"));
    assert_eq!(text.lines().count(), 49);
}
