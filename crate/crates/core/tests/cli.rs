use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn chgrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chgrl")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL_GEN: &str = r#"{
  "patients": 60, "case_count": 24, "control_count": 36, "pp_edges": 150,
  "diseases": 30, "dd_edges": 60, "feature_dim": 10, "shifted_features": 3,
  "causal_disease_count": 4, "spurious_disease_count": 4, "seed": 3
}"#;

const SMALL_TRAIN: &str = r#"{
  "lambda": 0.005, "lr": 0.02, "hidden": 8, "epochs": 6,
  "split": { "train": 0.6, "val": 0.2, "test": 0.2 },
  "runs": 2, "patience": 30, "seed": 7
}"#;

fn write_configs(dir: &Path) -> (String, String) {
    let gen = dir.join("gen.json");
    let train = dir.join("train.json");
    fs::write(&gen, SMALL_GEN).unwrap();
    fs::write(&train, SMALL_TRAIN).unwrap();
    (gen.to_string_lossy().into_owned(), train.to_string_lossy().into_owned())
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&chgrl(&[])), 1);
    let o = chgrl(&["train", "--model", "chgrl"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--data"));
    assert_eq!(code(&chgrl(&["generate", "--out", "x", "--bogus"])), 1);
    assert_eq!(code(&chgrl(&["train", "--data", "d", "--out", "o", "--model", "gat"])), 1);
}

#[test]
fn help_documents_flags_and_defaults() {
    for sub in ["generate", "impute", "train", "evaluate", "report", "pipeline"] {
        let o = chgrl(&[sub, "--help"]);
        assert_eq!(code(&o), 0, "{sub}");
        assert!(String::from_utf8_lossy(&o.stdout).contains("--out"), "{sub}");
    }
    let help = String::from_utf8_lossy(&chgrl(&["train", "--help"]).stdout).into_owned();
    for needle in ["0.005", "0.02", "64", "--lambda", "--lr", "--hidden", "--config"] {
        assert!(help.contains(needle), "train help lacks {needle}");
    }
}

#[test]
fn missing_labels_file_exits_with_two_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let (gen, _) = write_configs(dir.path());
    let data = dir.path().join("data");
    let data_s = data.to_string_lossy();
    assert_eq!(code(&chgrl(&["generate", "--config", &gen, "--out", &data_s])), 0);
    fs::remove_file(data.join("labels.csv")).unwrap();
    let o = chgrl(&["train", "--data", &data_s, "--out", &dir.path().join("runs").to_string_lossy()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("labels.csv"), "{}", stderr(&o));
}

#[test]
fn bad_config_exits_with_two_naming_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gen.json");
    fs::write(&cfg, r#"{"patients": 10, "colour": "red"}"#).unwrap();
    let o = chgrl(&["generate", "--config", &cfg.to_string_lossy(), "--out", &dir.path().to_string_lossy()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("gen.json"));
}

#[test]
fn train_without_complete_features_points_at_impute() {
    let dir = tempfile::tempdir().unwrap();
    let (gen, _) = write_configs(dir.path());
    let data = dir.path().join("data").to_string_lossy().into_owned();
    chgrl(&["generate", "--config", &gen, "--out", &data]);
    let o = chgrl(&["train", "--data", &data, "--out", &dir.path().join("r").to_string_lossy()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("features.csv") && stderr(&o).contains("impute"));
}

#[test]
fn diverging_imputation_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let (gen, _) = write_configs(dir.path());
    let data = dir.path().join("data").to_string_lossy().into_owned();
    chgrl(&["generate", "--config", &gen, "--out", &data]);
    let o = chgrl(&["impute", "--data", &data, "--lr", "1e6", "--epochs", "50", "--out", &data]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("lr"));
}

#[test]
fn stages_chain_and_flags_override_json() {
    let dir = tempfile::tempdir().unwrap();
    let (gen, train) = write_configs(dir.path());
    let data = dir.path().join("data");
    let runs = dir.path().join("runs");
    let out = dir.path().join("report");
    let (data_s, runs_s, out_s) = (data.to_string_lossy(), runs.to_string_lossy(), out.to_string_lossy());

    assert_eq!(code(&chgrl(&["generate", "--config", &gen, "--out", &data_s])), 0);
    assert!(data.join("ground_truth.json").is_file());
    let o = chgrl(&["impute", "--data", &data_s, "--epochs", "200", "--out", &data_s]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(data.join("features_imputed.csv").is_file());
    let trace = fs::read_to_string(data.join("impute_trace.csv")).unwrap();
    assert!(trace.starts_with("epoch,objective\n"));

    for model in ["chgrl", "rgcn"] {
        let o = chgrl(&["train", "--data", &data_s, "--config", &train, "--model", model, "--epochs", "4", "--out", &runs_s]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let run0 = runs.join(model).join("run_0");
        for f in ["checkpoint.json", "log.csv", "predictions.csv", "embeddings.csv"] {
            assert!(run0.join(f).is_file(), "{model}/{f}");
        }
        let log = fs::read_to_string(run0.join("log.csv")).unwrap();
        assert_eq!(log.lines().count(), 1 + 4, "--epochs 4 must win over the config's 6");
    }

    let ck = runs.join("chgrl/run_1/checkpoint.json");
    let ev = dir.path().join("eval");
    let o = chgrl(&["evaluate", "--data", &data_s, "--checkpoint", &ck.to_string_lossy(), "--out", &ev.to_string_lossy()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        fs::read(ev.join("predictions.csv")).unwrap(),
        fs::read(runs.join("chgrl/run_1/predictions.csv")).unwrap()
    );
    assert!(ev.join("metrics.json").is_file());

    assert_eq!(code(&chgrl(&["report", "--runs", &runs_s, "--out", &out_s])), 0);
    let md = fs::read_to_string(out.join("results.md")).unwrap();
    assert!(md.contains("| chgrl |") && md.contains("| rgcn |"), "{md}");
    let csv = fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 3);
    for f in ["roc_chgrl.csv", "roc_rgcn.csv", "embeddings.csv", "embeddings_2d.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
}

#[test]
fn pipeline_twice_gives_identical_results() {
    let dir = tempfile::tempdir().unwrap();
    let (gen, train) = write_configs(dir.path());
    let mut tables = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("p{k}"));
        let o = chgrl(&["pipeline", "--gen", &gen, "--train", &train, "--out", &out.to_string_lossy()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        tables.push(fs::read(out.join("results.csv")).unwrap());
    }
    assert_eq!(tables[0], tables[1]);
}
