use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use adagev::evt::GevParams;
use adagev::model::{load_checkpoint, save_checkpoint, ModelParams, ModelSpecs};
use adagev::pipeline::{stream_rng, Stream};
use serde_json::Value;
use tempfile::TempDir;

fn adagev(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adagev"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = adagev(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    adagev(dir, args).status.code().expect("exited normally")
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn gen_data_is_deterministic_and_checks_the_split() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let stdout = ok(d, &["gen-data", "--out", "a", "--seed", "4"]);
    assert!(stdout.contains("2000 source and 1500 target samples, 10 classes"));
    ok(d, &["gen-data", "--out", "b", "--seed", "4"]);
    let a = fs::read(d.join("a/blobs.csv")).unwrap();
    assert_eq!(a, fs::read(d.join("b/blobs.csv")).unwrap());
    assert_eq!(a.iter().filter(|&&b| b == b'\n').count(), 3501);

    assert_eq!(code(d, &["gen-data", "--out", "c", "--classes", "3"]), 2);
}

#[test]
fn train_echoes_default_loss_weights() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(d, &["train", "--out", "run", "--epochs", "1"]);
    let cfg = json(d.join("run/config.json"));
    let lw = &cfg["train"]["loss_weights"];
    assert_eq!(lw["lambda_d"], 0.5);
    assert_eq!(lw["lambda_e"], 1.0);
    assert_eq!(lw["lambda_c"], 1.0);
    let log = fs::read_to_string(d.join("run/train.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 1);
    let record: Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    for key in [
        "epoch",
        "loss_domain",
        "loss_entropy_unknown",
        "loss_classification",
        "loss_total",
        "mean_weight",
        "max_weight",
        "known_entropy",
        "unknown_entropy",
    ] {
        assert!(record[key].is_number(), "{key}");
    }
    assert!(load_checkpoint(d.join("run/model.ckpt")).unwrap().gev.is_some());
}

#[test]
fn zero_learning_rate_leaves_init_parameters() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(
        d,
        &["train", "--out", "run", "--lr", "0", "--epochs", "1", "--seed", "3"],
    );
    let ckpt = load_checkpoint(d.join("run/model.ckpt")).unwrap();
    let specs = ModelSpecs::standard(2, 4);
    let init = ModelParams::init_with(&specs, &mut stream_rng(3, Stream::Init)).unwrap();
    assert_eq!(ckpt.params, init);
}

#[test]
fn bad_flags_are_usage_errors() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    assert_eq!(code(d, &["train", "--out", "x", "--z-mode", "sideways"]), 2);
    assert_eq!(code(d, &["train", "--out", "x", "--tail", "median:4"]), 2);
    assert_eq!(code(d, &["train", "--out", "x", "--batch", "0"]), 2);
    assert_eq!(code(d, &["train", "--out", "x", "--lambda-d", "0.1,0.5"]), 2);
    assert_eq!(code(d, &["ablate", "--out", "x", "--variant", "half"]), 2);
    assert!(!d.join("x").exists());
}

#[test]
fn missing_inputs_are_data_errors() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    assert_eq!(code(d, &["eval", "--checkpoint", "none.ckpt", "--out", "r.json"]), 3);
    assert_eq!(code(d, &["train", "--out", "x", "--data", "none.csv"]), 3);
    fs::write(d.join("values.txt"), "0.1 0.2 oops").unwrap();
    assert_eq!(code(d, &["fit-gev", "--input", "values.txt"]), 3);

    let params = ModelParams::init(&ModelSpecs::standard(2, 4), 0).unwrap();
    save_checkpoint(d.join("bare.ckpt"), &params, None).unwrap();
    assert_eq!(code(d, &["eval", "--checkpoint", "bare.ckpt", "--out", "r.json"]), 3);
    ok(
        d,
        &[
            "eval",
            "--checkpoint",
            "bare.ckpt",
            "--threshold",
            "0.5",
            "--out",
            "r.json",
        ],
    );
}

#[test]
fn divergence_is_a_numerical_error() {
    let tmp = TempDir::new().unwrap();
    let args = [
        "train",
        "--out",
        "x",
        "--epochs",
        "1",
        "--optimizer",
        "sgd",
        "--lr",
        "1e300",
    ];
    assert_eq!(code(tmp.path(), &args), 4);
}

#[test]
fn config_echo_reproduces_the_run() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(d, &["gen-data", "--out", "data", "--seed", "2"]);
    ok(
        d,
        &[
            "train",
            "--data",
            "data/blobs.csv",
            "--out",
            "a",
            "--epochs",
            "2",
            "--seed",
            "7",
            "--z-mode",
            "fresh-batch",
            "--tail",
            "top:0.1",
        ],
    );
    // From another directory, so relative paths would break.
    fs::create_dir(d.join("elsewhere")).unwrap();
    ok(
        &d.join("elsewhere"),
        &["train", "--config", "../a/config.json", "--out", "../b"],
    );
    for file in ["config.json", "model.ckpt", "train.jsonl"] {
        assert_eq!(
            fs::read(d.join("a").join(file)).unwrap(),
            fs::read(d.join("b").join(file)).unwrap(),
            "{file}"
        );
    }

    // A flag still overrides the file.
    ok(d, &["train", "--config", "a/config.json", "--out", "c", "--seed", "8"]);
    assert_eq!(json(d.join("c/config.json"))["train"]["seed"], 8);
    assert_ne!(
        fs::read(d.join("a/model.ckpt")).unwrap(),
        fs::read(d.join("c/model.ckpt")).unwrap()
    );

    ok(
        d,
        &[
            "eval",
            "--checkpoint",
            "a/model.ckpt",
            "--config",
            "a/config.json",
            "--out",
            "a/report.json",
        ],
    );
    let report = json(d.join("a/report.json"));
    assert_eq!(report["samples"], 1050);
    assert!(report["gev"]["s"].as_f64().unwrap() > 0.0);
    assert_eq!(report["config"]["train"]["seed"], 7);
}

#[test]
fn fit_gev_recovers_sampled_parameters() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let truth = GevParams::new(0.5, 0.2, 0.1).unwrap();
    let text: String = adagev::gev_sample(&truth, 20_000, 17)
        .iter()
        .map(|v| format!("{v}\n"))
        .collect();
    fs::write(d.join("samples.txt"), text).unwrap();
    ok(d, &["fit-gev", "--input", "samples.txt", "--out", "fit.json"]);
    let fit = json(d.join("fit.json"));
    assert_eq!(fit["values"], 20_000);
    let p = &fit["params"];
    assert!((p["l"].as_f64().unwrap() - 0.5).abs() < 0.05);
    assert!((p["s"].as_f64().unwrap() - 0.2).abs() < 0.05);
    assert!((p["c"].as_f64().unwrap() - 0.1).abs() < 0.08);

    let stdout = ok(d, &["fit-gev", "--input", "samples.txt", "--tail", "block:20"]);
    let blocked: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(blocked["fitted"], 1000);
}

#[test]
fn ablate_labels_reports_with_the_variant() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let stdout = ok(
        d,
        &["ablate", "--out", "abl", "--epochs", "1", "--variant", "no-reweight"],
    );
    assert!(stdout.contains("no_reweight"));
    let report = json(d.join("abl/no_reweight/report.json"));
    assert_eq!(report["variant"], "no_reweight");
    assert_eq!(report["config"]["variant"]["mode"], "no_reweight");
    assert!(!d.join("abl/full").exists());
}

#[test]
fn sweep_writes_one_report_per_point_and_a_summary() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let args = |out: &'static str, jobs: &'static str| {
        vec![
            "sweep",
            "--out",
            out,
            "--epochs",
            "1",
            "--lambda-d",
            "0.1,0.5,1.0",
            "--jobs",
            jobs,
        ]
    };
    ok(d, &args("serial", "1"));
    ok(d, &args("parallel", "3"));
    let summary = fs::read_to_string(d.join("serial/summary.tsv")).unwrap();
    assert_eq!(summary.lines().count(), 4);
    assert_eq!(summary, fs::read_to_string(d.join("parallel/summary.tsv")).unwrap());
    for (i, ld) in [0.1, 0.5, 1.0].iter().enumerate() {
        let report = json(d.join(format!("serial/point-{i:03}/report.json")));
        assert_eq!(report["config"]["train"]["loss_weights"]["lambda_d"], *ld);
        assert_eq!(report["variant"], "full");
    }
    let rows = json(d.join("serial/summary.json"));
    assert_eq!(rows.as_array().unwrap().len(), 3);
}
