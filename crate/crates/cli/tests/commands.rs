use std::path::Path;
use std::process::Command;

use qlab_cli::model_file::ModelFile;
use qlab_core::example_table;

fn qlab(args: &[&str], dir: &Path) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_qlab"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap();
    let text = String::from_utf8_lossy(&out.stdout).to_string() + &String::from_utf8_lossy(&out.stderr);
    (out.status.code().unwrap(), text)
}

fn table(dir: &Path) -> String {
    let path = dir.join("table.csv");
    example_table().write_csv(std::fs::File::create(&path).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn fit_writes_model_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = table(dir.path());
    let (code, out) = qlab(&["fit", "--data", &data, "--method", "independent", "--taus", "0.10,0.15", "--out-dir", "m"], dir.path());
    assert_eq!(code, 0, "{out}");
    let model = ModelFile::load(&dir.path().join("m/model.json")).unwrap();
    assert_eq!(model.feature_names, vec!["(intercept)", "X"]);
    assert_eq!(model.response, "Y");
    assert!((model.coef[0][0] - 2.2587314582875555).abs() < 1e-9);
    let report = read_json(&dir.path().join("m/fit_report.json"));
    assert_eq!(report["training_crossings"]["count"], 6);
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn model_file_roundtrips_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let data = table(dir.path());
    let (code, out) = qlab(&["fit", "--data", &data, "--method", "mqgd", "--out-dir", "m"], dir.path());
    assert_eq!(code, 0, "{out}");
    assert!(dir.path().join("m/trace.csv").exists());
    let path = dir.path().join("m/model.json");
    let loaded = ModelFile::load(&path).unwrap();
    let again = dir.path().join("again.json");
    loaded.save(&again).unwrap();
    let reloaded = ModelFile::load(&again).unwrap();
    assert_eq!(loaded, reloaded);
    for (a, b) in loaded.coef.iter().flatten().zip(reloaded.coef.iter().flatten()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    assert_eq!(loaded.seed, Some(42));
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn bad_inputs_exit_with_input_code() {
    let dir = tempfile::tempdir().unwrap();
    let data = table(dir.path());
    assert_eq!(qlab(&["fit", "--data", &data, "--taus", "1.5"], dir.path()).0, 2);
    assert_eq!(qlab(&["fit", "--data", "missing.csv"], dir.path()).0, 2);
    assert_eq!(qlab(&["fit", "--data", &data, "--method", "simplex"], dir.path()).0, 2);
    assert_eq!(qlab(&["fit", "--data", &data, "--response", "Z"], dir.path()).0, 2);
    assert_eq!(qlab(&["frobnicate"], dir.path()).0, 2);
    std::fs::write(dir.path().join("bad.toml"), "colour = \"red\"\n").unwrap();
    assert_eq!(qlab(&["fit", "--config", "bad.toml"], dir.path()).0, 2);
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let data = table(dir.path());
    std::fs::write(
        dir.path().join("run.toml"),
        format!("data = \"{data}\"\nmethod = \"cjqr\"\ntaus = \"0.1,0.15\"\nout_dir = \"from_config\"\n"),
    )
    .unwrap();
    let (code, out) = qlab(&["fit", "--config", "run.toml"], dir.path());
    assert_eq!(code, 0, "{out}");
    let m = ModelFile::load(&dir.path().join("from_config/model.json")).unwrap();
    assert_eq!(m.method.as_str(), "cjqr");

    let (code, out) = qlab(&["fit", "--config", "run.toml", "--method", "independent", "--out-dir", "from_flag"], dir.path());
    assert_eq!(code, 0, "{out}");
    let m = ModelFile::load(&dir.path().join("from_flag/model.json")).unwrap();
    assert_eq!(m.method.as_str(), "independent");
}

#[test]
fn sgp_scores_and_crossing_frequency() {
    let dir = tempfile::tempdir().unwrap();
    let data = table(dir.path());
    for method in ["independent", "cjqr"] {
        let (code, out) = qlab(&["fit", "--data", &data, "--method", method, "--out-dir", method], dir.path());
        assert_eq!(code, 0, "{out}");
        let model = format!("{method}/model.json");
        let out_dir = format!("{method}_scores");
        let (code, out) = qlab(&["sgp", "--model", &model, "--data", &data, "--policy", "pav", "--out-dir", &out_dir], dir.path());
        assert_eq!(code, 0, "{out}");
        let summary = read_json(&dir.path().join(&out_dir).join("sgp_summary.json"));
        assert_eq!(summary["n"], 20);
        let freq = summary["crossing_frequency"].as_f64().unwrap();
        if method == "cjqr" {
            assert_eq!(freq, 0.0);
        } else {
            assert!(freq > 0.0);
        }
        let scores = std::fs::read_to_string(dir.path().join(&out_dir).join("scores.csv")).unwrap();
        assert_eq!(scores.lines().count(), 21);
        assert!(scores.starts_with("student_id,tau_hat,sgp"));
    }
}

#[test]
fn sgp_on_empty_students() {
    let dir = tempfile::tempdir().unwrap();
    let data = table(dir.path());
    assert_eq!(qlab(&["fit", "--data", &data, "--out-dir", "m"], dir.path()).0, 0);
    for (name, content) in [("zero.csv", ""), ("header.csv", "X,Y\n")] {
        std::fs::write(dir.path().join(name), content).unwrap();
        let (code, out) = qlab(&["sgp", "--model", "m/model.json", "--data", name, "--out-dir", "e"], dir.path());
        assert_eq!(code, 0, "{out}");
        assert_eq!(read_json(&dir.path().join("e/sgp_summary.json"))["n"], 0);
        let scores = std::fs::read_to_string(dir.path().join("e/scores.csv")).unwrap();
        assert_eq!(scores.lines().count(), 1);
    }
    std::fs::write(dir.path().join("wrong.csv"), "age,Y\n1,2\n").unwrap();
    assert_eq!(qlab(&["sgp", "--model", "m/model.json", "--data", "wrong.csv"], dir.path()).0, 2);
}

#[test]
fn diagnose_reports_coverage() {
    let dir = tempfile::tempdir().unwrap();
    let data = table(dir.path());
    assert_eq!(qlab(&["fit", "--data", &data, "--out-dir", "m"], dir.path()).0, 0);
    let (code, out) = qlab(&["diagnose", "--model", "m/model.json", "--data", &data, "--out-dir", "d"], dir.path());
    assert_eq!(code, 0, "{out}");
    let report = read_json(&dir.path().join("d/diagnose.json"));
    assert_eq!(report["rearrange"][0]["coverage_raw"], 0.15);
    assert_eq!(report["training_crossings"]["count"], 6);
    assert!(dir.path().join("d/coverage.csv").exists());
}

#[test]
fn bench_small_grid() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out) = qlab(
        &["bench", "--method", "cjqr", "--n-list", "20,40", "--q-list", "2,3", "--repeats", "1", "--out-dir", "b"],
        dir.path(),
    );
    assert_eq!(code, 0, "{out}");
    let csv = std::fs::read_to_string(dir.path().join("b/bench_cjqr.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(read_json(&dir.path().join("b/bench.json"))["tables"][0]["slopes_in_q"].is_array());
}

#[test]
fn threads_env_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_qlab"))
        .args(["fit", "--data", "x.csv"])
        .env("QLAB_THREADS", "zero")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
