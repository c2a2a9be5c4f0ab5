use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sml(args: &[&str]) -> Output {
    sml_env(args, &[])
}

fn sml_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sml"));
    cmd.args(args).env_remove("SML_THREADS").env("RUST_LOG", "warn");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn ok(out: Output) -> Output {
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path) -> String {
    ok(sml(&[
        "synth", "--out", s(dir), "--normal", "12", "--abnormal", "20", "--seed", "3", "--p", "8", "--m-min", "8",
        "--m-max", "12",
    ]));
    s(&dir.join("manifest.csv")).to_owned()
}

const SMALL: &[&str] = &["--trees", "40", "--features", "4", "--grid-step", "0.1", "--quantiles", "5", "--seed", "3"];

fn train(manifest: &str, model: &Path, extra: &[&str], env: &[(&str, &str)]) {
    let mut args = vec!["train", "--manifest", manifest, "--model-out", s(model)];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    ok(sml_env(&args, env));
}

#[test]
fn synth_train_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir.path().join("cohort"));
    let text = fs::read_to_string(&manifest).unwrap();
    assert!(text.starts_with("patient_id,label,path\ncase0000,normal,case0000.sps\n"));
    assert_eq!(text.lines().count(), 33);
    assert!(!text.contains('\r'));

    let model = dir.path().join("m.json");
    let report = dir.path().join("r.json");
    train(&manifest, &model, &["--report-out", s(&report)], &[]);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&model).unwrap()).unwrap();
    assert_eq!(json["format_version"], "sml-model-v1");
    let in_sample: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(in_sample["accuracy"], 1.0);

    let preds = dir.path().join("p.csv");
    let roc = dir.path().join("roc.csv");
    let eval = dir.path().join("e.json");
    ok(sml(&[
        "predict", "--model", s(&model), "--manifest", &manifest, "--out", s(&preds), "--roc", s(&roc),
        "--report-out", s(&eval),
    ]));
    let preds = fs::read_to_string(&preds).unwrap();
    let mut lines = preds.lines();
    assert_eq!(lines.next(), Some("patient_id,score,predicted_label,true_label"));
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), 4);
        assert_eq!(cols[2], cols[3], "in-sample row {line}");
    }
    let roc = fs::read_to_string(&roc).unwrap();
    assert!(roc.starts_with("threshold,fpr,tpr\ninf,0,0\n"), "{roc}");
    assert!(roc.trim_end().ends_with(",1,1"));
    let eval: serde_json::Value = serde_json::from_str(&fs::read_to_string(&eval).unwrap()).unwrap();
    assert_eq!(eval["auc"], 1.0);
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir.path().join("cohort"));
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    train(&manifest, &a, &[], &[("SML_THREADS", "1")]);
    train(&manifest, &b, &["--threads", "3"], &[("SML_THREADS", "1")]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let (pa, pb) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    ok(sml_env(&["predict", "--model", s(&a), "--manifest", &manifest, "--out", s(&pa)], &[("SML_THREADS", "1")]));
    ok(sml_env(&["predict", "--model", s(&a), "--manifest", &manifest, "--out", s(&pb)], &[("SML_THREADS", "4")]));
    assert_eq!(fs::read(&pa).unwrap(), fs::read(&pb).unwrap());
}

#[test]
fn select_mask_stats_and_crossval_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir.path().join("cohort"));

    let fig = dir.path().join("curve.csv");
    let out = ok(sml(&["select", "--manifest", &manifest, "--grid-step", "0.25", "--quantiles", "5", "--out", s(&fig)]));
    let fig = fs::read_to_string(&fig).unwrap();
    let rows: Vec<&str> = fig.lines().collect();
    assert_eq!(rows[0], "ell,alpha,misclustering_error");
    assert_eq!(rows.len(), 1 + 2 * 5);
    assert!(rows[1].starts_with("1,0,") && rows[6].starts_with("2,0,"));
    let sel: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(sel["alphas"].as_array().unwrap().len(), 5);

    let table = dir.path().join("mask_stats.csv");
    ok(sml(&["mask-stats", "--manifest", &manifest, "--out", s(&table)]));
    let table = fs::read_to_string(&table).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows[0], "alpha,pct_A1,pct_A2,pct_A3");
    assert_eq!(rows.len(), 7);
    for r in &rows[1..] {
        let v: Vec<f64> = r.split(',').map(|x| x.parse().unwrap()).collect();
        assert!((v[1] + v[2] + v[3] - 100.0).abs() < 1e-9);
    }

    let cv = dir.path().join("cv.json");
    let mut args = vec![
        "crossval", "--manifest", &manifest, "--repeats", "2", "--train-normal", "8", "--train-abnormal", "14",
        "--out", s(&cv),
    ];
    args.extend_from_slice(SMALL);
    ok(sml(&args));
    let cv: serde_json::Value = serde_json::from_str(&fs::read_to_string(&cv).unwrap()).unwrap();
    assert_eq!(cv["runs"].as_array().unwrap().len(), 2);
    assert_eq!(cv["summary"].as_array().unwrap().len(), 3);
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let m = s(dir.path()).to_owned() + "/missing.csv";
    let model = s(dir.path()).to_owned() + "/m.json";
    assert_eq!(code(&sml(&[])), 1);
    assert_eq!(code(&sml(&["train", "--bogus"])), 1);
    assert_eq!(code(&sml(&["train", "--manifest", &m, "--model-out", &model, "--quantiles", "7"])), 1);
    assert_eq!(code(&sml(&["train", "--manifest", &m, "--model-out", &model, "--threads", "0"])), 1);
    assert_eq!(code(&sml_env(&["train", "--manifest", &m, "--model-out", &model], &[("SML_THREADS", "x")])), 1);
    assert_eq!(code(&sml(&["synth", "--out", s(dir.path()), "--normal", "1", "--abnormal", "1", "--m-min", "2"])), 1);
    assert_eq!(code(&sml(&["mask-stats", "--manifest", &m, "--out", &model, "--ell", "3"])), 1);
    assert_eq!(code(&sml(&["--help"])), 0);
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir.path().join("cohort"));
    let model = dir.path().join("m.json");
    let missing = s(dir.path()).to_owned() + "/missing.csv";
    assert_eq!(code(&sml(&["train", "--manifest", &missing, "--model-out", s(&model)])), 2);

    // unlabelled rows cannot train
    let unlabelled = dir.path().join("cohort/unlabelled.csv");
    let text = fs::read_to_string(&manifest).unwrap().replace(",normal,", ",,");
    fs::write(&unlabelled, text).unwrap();
    assert_eq!(code(&sml(&["train", "--manifest", s(&unlabelled), "--model-out", s(&model)])), 2);

    train(&manifest, &model, &[], &[]);
    let preds = dir.path().join("p.csv");
    let v999 = dir.path().join("v999.json");
    fs::write(&v999, fs::read_to_string(&model).unwrap().replace("sml-model-v1", "v999")).unwrap();
    assert_eq!(code(&sml(&["predict", "--model", s(&v999), "--manifest", &manifest, "--out", s(&preds)])), 2);

    // a corrupt stack is reported per patient, the batch still succeeds
    fs::write(dir.path().join("cohort/case0002.sps"), b"junk").unwrap();
    ok(sml(&["predict", "--model", s(&model), "--manifest", s(&unlabelled), "--out", s(&preds)]));
    let text = fs::read_to_string(&preds).unwrap();
    assert!(text.starts_with("patient_id,score,predicted_label,true_label\n"));
    assert!(text.contains("\ncase0002,,undiagnosed,\n"), "{text}");
}
