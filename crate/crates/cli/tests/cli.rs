use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lctlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lctlab"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = lctlab(args);
    assert!(
        out.status.success(),
        "{args:?}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write(path: &Path, text: &str) -> String {
    fs::write(path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn generate_train_evaluate_on_csv() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let data_cfg = write(
        &dir.path().join("data.json"),
        r#"{"d": 3, "separation": 2.0, "n_majority": 300, "beta_target": 10, "n_test_per_class": 50, "seed": 1}"#,
    );
    ok(&[
        "generate-data",
        "--config",
        &data_cfg,
        "--seed",
        "4",
        "--out",
        &p("data"),
    ]);
    let train_csv = fs::read_to_string(p("data/train.csv")).unwrap();
    assert_eq!(train_csv.lines().count(), 1 + 300 + 30);

    let train_cfg = write(
        &dir.path().join("train.json"),
        &format!(
            r#"{{"data": {{"csv": {{"train": "{}", "test": "{}", "label_column": "label", "subsample_seed": 0}}}},
                "train": {{"method": "lct", "loss": "vs", "lambda": ["L(0,0.3,0)", "L(0,3,0.33)"],
                           "optimizer": {{"kind": "sgd", "lr": 0.05}}, "epochs": 3,
                           "network": {{"hidden": [8], "channels": 4, "film_hidden": 8}}}}}}"#,
            p("data/train.csv"),
            p("data/test.csv")
        ),
    );
    ok(&[
        "train",
        "--config",
        &train_cfg,
        "--seed",
        "2",
        "--out",
        &p("model"),
    ]);
    assert_eq!(
        fs::read_to_string(p("model/trace.jsonl"))
            .unwrap()
            .lines()
            .count(),
        3
    );

    let eval_cfg = write(
        &dir.path().join("eval.json"),
        &format!(
            r#"{{"model": "{}", "data": {{"csv": {{"train": "{}", "test": "{}", "label_column": "label", "subsample_seed": 0}}}},
                "eval": [[0.0, 0.3], [1, 2, 3]]}}"#,
            p("model/model.ckpt"),
            p("data/train.csv"),
            p("data/test.csv")
        ),
    );
    let stdout = ok(&["evaluate", "--config", &eval_cfg, "--out", &p("eval")]);
    assert_eq!(stdout.lines().count(), 1 + 6);
    let reports: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(p("eval/reports.json")).unwrap()).unwrap();
    assert_eq!(reports.as_array().unwrap().len(), 6);

    // Same seed, same model bytes.
    ok(&[
        "train",
        "--config",
        &train_cfg,
        "--seed",
        "2",
        "--out",
        &p("model2"),
    ]);
    assert_eq!(
        fs::read(p("model/model.ckpt")).unwrap(),
        fs::read(p("model2/model.ckpt")).unwrap()
    );
}

#[test]
fn sweep_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let cfg = write(
        &dir.path().join("sweep.json"),
        r#"{"data": {"synthetic": {"d": 3, "separation": 2.0, "n_majority": 200, "beta_target": 10,
                                    "n_test_per_class": 50, "seed": 0}},
            "seeds": [0, 1], "recall_grid": [0.9, 0.99],
            "training": {"epochs": 2, "network": {"hidden": [6], "channels": 4, "film_hidden": 6}},
            "methods": [{"name": "vs", "train": [[0.0, 0.2], [1]]},
                        {"name": "vs+lct", "train": [["L(0,0.3,0)"], ["L(0,3,0.33)"]], "eval": [[0.1], [1, 2]]}]}"#,
    );
    let stdout = ok(&[
        "sweep",
        "--config",
        &cfg,
        "--seed",
        "7",
        "--out",
        &p("sweep"),
        "--workers",
        "2",
    ]);
    assert!(stdout.contains("3 models x 1 seeds"), "{stdout}");
    assert!(stdout.contains("best auc:"));
    let seeds: Vec<_> = fs::read_dir(p("sweep/results/vs+lct")).unwrap().collect();
    assert_eq!(seeds.len(), 1);

    let report_cfg = write(
        &dir.path().join("report.json"),
        r#"{"selection": {"per_seed_curves": true}}"#,
    );
    ok(&["report", "--config", &report_cfg, "--out", &p("sweep")]);
    let scatter = fs::read_to_string(p("sweep/curves/scatter.csv")).unwrap();
    assert_eq!(scatter.lines().count(), 1 + 2 + 2);
    assert!(Path::new(&p("sweep/aggregate/p_at_r0.99.csv")).is_file());
}

#[test]
fn bad_configs_fail_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let out = out.to_str().unwrap();
    let bad = write(&dir.path().join("bad.json"), r#"{"d": 3, "bogus": 1}"#);
    let res = lctlab(&["generate-data", "--config", &bad, "--out", out]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("bad.json"));

    let res = lctlab(&["train", "--out", out]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("--config"));

    let res = lctlab(&[
        "report",
        "--out",
        dir.path().join("missing").to_str().unwrap(),
    ]);
    assert!(!res.status.success());
}
