use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"{
  "seed": 3,
  "split": 0.75,
  "scenario": { "n_trajectories": 40 },
  "train": {
    "cell_width": 2.0,
    "dictionary": { "lambda": 1.0, "k_max": 2 },
    "gp": { "max_points": 200, "opt_max_points": 80, "max_opt_iters": 8 }
  }
}"#;

fn casnsc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_casnsc"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn err(out: &Output) -> String {
    assert!(!out.status.success());
    String::from_utf8(out.stderr.clone()).unwrap()
}

#[test]
fn synth_train_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("run.json"), SMALL).unwrap();

    let summary = ok(&casnsc(d, &["--config", "run.json", "synth", "--out", "data"]));
    assert!(summary.starts_with("40 trajectories"), "{summary}");
    for f in ["dataset.jsonl", "map.json", "config.json"] {
        assert!(d.join("data").join(f).exists(), "{f}");
    }
    let first = fs::read(d.join("data/dataset.jsonl")).unwrap();
    let msg = err(&casnsc(d, &["--config", "run.json", "synth", "--out", "data"]));
    assert!(msg.contains("--force"), "{msg}");
    ok(&casnsc(d, &["--config", "run.json", "synth", "--out", "data", "--force"]));
    assert_eq!(fs::read(d.join("data/dataset.jsonl")).unwrap(), first);

    let msg = err(&casnsc(
        d,
        &["--config", "run.json", "train", "--data", "data/dataset.jsonl", "--feature-set", "casnsc3", "--out", "m"],
    ));
    assert!(msg.contains("CASNSC-3"), "{msg}");

    ok(&casnsc(
        d,
        &["--config", "run.json", "train", "--data", "data/dataset.jsonl", "--feature-set", "asnsc", "--out", "m"],
    ));
    let train_out = ok(&casnsc(
        d,
        &[
            "--config", "run.json", "train", "--data", "data/dataset.jsonl", "--map", "data/map.json",
            "--feature-set", "asnsc", "--feature-set", "casnsc3", "--out", "m", "--force",
        ],
    ));
    assert!(train_out.contains("K="), "{train_out}");
    assert!(train_out.contains("sha256="), "{train_out}");
    let model_a = fs::read(d.join("m/casnsc3.model.json")).unwrap();
    ok(&casnsc(
        d,
        &[
            "--config", "run.json", "train", "--data", "data/dataset.jsonl", "--map", "data/map.json",
            "--feature-set", "casnsc3", "--out", "m2",
        ],
    ));
    assert_eq!(fs::read(d.join("m2/casnsc3.model.json")).unwrap(), model_a);

    let table = ok(&casnsc(
        d,
        &[
            "--config", "run.json", "eval", "--model", "m/asnsc.model.json", "--model", "m/casnsc3.model.json",
            "--data", "data/dataset.jsonl", "--out", "eval",
        ],
    ));
    assert!(table.starts_with("model\taccuracy_pct\tmhd_m\tauc_m2\ttime_s"), "{table}");
    let tsv = fs::read_to_string(d.join("eval/report.tsv")).unwrap();
    let rows: Vec<&str> = tsv.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("ASNSC\t") && rows[2].starts_with("CASNSC-3\t"));
    assert!(rows.iter().all(|r| r.split('\t').count() == 5));
    let plots = fs::read_dir(d.join("eval/plots")).unwrap().count();
    assert_eq!(plots, 10);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(d.join("eval/report.json")).unwrap()).unwrap();
    assert_eq!(report.as_array().unwrap().len(), 2);

    let preds = ok(&casnsc(
        d,
        &["--config", "run.json", "predict", "--model", "m/casnsc3.model.json", "--data", "data/dataset.jsonl"],
    ));
    let preds: serde_json::Value = serde_json::from_str(&preds).unwrap();
    assert_eq!(preds.as_array().unwrap().len(), 10);

    ok(&casnsc(d, &["plot", "--data", "data/dataset.jsonl", "--map", "data/map.json", "--out", "overview"]));
    assert!(fs::read_to_string(d.join("overview/dataset.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn context_models_need_light_annotations() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("run.json"), SMALL).unwrap();
    ok(&casnsc(d, &["--config", "run.json", "synth", "--out", "data"]));
    ok(&casnsc(
        d,
        &[
            "--config", "run.json", "train", "--data", "data/dataset.jsonl", "--map", "data/map.json",
            "--feature-set", "casnsc1", "--out", "m",
        ],
    ));
    // Strip the light flags from every record.
    let bare: String = fs::read_to_string(d.join("data/dataset.jsonl"))
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            let o = v.as_object_mut().unwrap();
            o.remove("t1");
            o.remove("t2");
            v.to_string() + "\n"
        })
        .collect();
    fs::write(d.join("bare.jsonl"), bare).unwrap();
    let msg = err(&casnsc(
        d,
        &["--config", "run.json", "eval", "--model", "m/casnsc1.model.json", "--data", "bare.jsonl", "--out", "e"],
    ));
    assert!(msg.contains("light"), "{msg}");
    let msg = err(&casnsc(d, &["eval", "--model", "missing.json", "--data", "bare.jsonl"]));
    assert!(msg.contains("missing.json"), "{msg}");
}
