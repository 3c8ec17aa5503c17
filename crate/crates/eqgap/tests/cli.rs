//! End-to-end checks of the command-line surface: exit codes, file
//! contracts, and idempotence.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn eqgap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eqgap"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Generate the two default experiments once per test that needs data.
fn generate_defaults(dir: &Path) {
    let out = eqgap(&["generate", "--out-dir", dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

fn write_run_config(dir: &Path) -> String {
    let config = serde_json::json!({
        "experiments": [
            {
                "name": "strip",
                "mesh": dir.join("strip.mesh.json"),
                "dataset": dir.join("strip.dataset.json")
            },
            {
                "name": "notched",
                "mesh": dir.join("notched.mesh.json"),
                "dataset": dir.join("notched.dataset.json")
            }
        ],
        "out_dir": dir,
        "split": {"n_train": 20, "n_val": 6, "source": 0}
    });
    let path = dir.join("run.json");
    fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn help_exits_zero_and_lists_commands() {
    let out = eqgap(&["--help"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in [
        "generate",
        "split",
        "train",
        "sweep",
        "evaluate",
        "predict",
        "continuity-scan",
    ] {
        assert!(text.contains(cmd), "help does not mention {cmd}");
    }
}

#[test]
fn unknown_flag_exits_two() {
    let out = eqgap(&["generate", "--no-such-flag"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn missing_output_dir_exits_two() {
    let out = eqgap(&["generate", "--out-dir", "/nonexistent/dir/for/eqgap"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("does not exist"));
}

#[test]
fn generate_defaults_writes_two_experiments() {
    let dir = TempDir::new().unwrap();
    let out = eqgap(&["generate", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for name in [
        "strip.mesh.json",
        "strip.dataset.json",
        "notched.mesh.json",
        "notched.dataset.json",
    ] {
        assert!(dir.path().join(name).is_file(), "{name} missing");
    }
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("strip:"));
    assert!(text.contains("notched:"));
    assert!(text.contains("max local stretch"));
}

#[test]
fn unsolvable_program_exits_three_with_last_converged_stretch() {
    let dir = TempDir::new().unwrap();
    let config = serde_json::json!({
        "out_dir": dir.path(),
        "generate": [{
            "name": "boom",
            "material": {"kind": "neo_hookean", "mu": 0.4, "lambda_v": 4.0},
            "geometry": {"kind": "strip", "width": 10.0, "height": 30.0, "nx": 2, "ny": 2},
            "stretches": [50.0],
            "max_iter": 1
        }]
    });
    let path = dir.path().join("gen.json");
    fs::write(&path, config.to_string()).unwrap();
    let out = eqgap(&["generate", "--config", path.to_str().unwrap()]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("last converged stretch"));
}

#[test]
fn corrupt_displacements_exit_three_on_inversion() {
    let dir = TempDir::new().unwrap();
    generate_defaults(dir.path());
    // An absurd displacement locally inverts an element.
    let path = dir.path().join("strip.dataset.json");
    let mut dataset: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    dataset["steps"][1]["displacements"][5][1] = serde_json::json!(1e300);
    fs::write(&path, dataset.to_string()).unwrap();

    let config = write_run_config(dir.path());
    let out = eqgap(&["train", "--config", &config, "--max-epochs", "2"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn train_neo_hookean_writes_model_and_metrics() {
    let dir = TempDir::new().unwrap();
    generate_defaults(dir.path());
    let config = write_run_config(dir.path());
    let out = eqgap(&[
        "train",
        "--config",
        &config,
        "--family",
        "neo-hookean",
        "--learning-rate",
        "0.02",
        "--max-epochs",
        "40",
        "--patience",
        "40",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let model: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("model.json")).unwrap()).unwrap();
    assert_eq!(model["kind"], "neo_hookean");
    assert_eq!(model["theta"].as_array().unwrap().len(), 2);

    let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("metric,value\n"));
    assert!(metrics.contains("best_val_loss,"));
    let history = fs::read_to_string(dir.path().join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 41, "header plus one row per epoch");
}

#[test]
fn evaluate_writes_all_tables() {
    let dir = TempDir::new().unwrap();
    generate_defaults(dir.path());
    let config = write_run_config(dir.path());
    let out = eqgap(&[
        "train",
        "--config",
        &config,
        "--max-epochs",
        "30",
        "--learning-rate",
        "0.02",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let model = dir.path().join("model.json");
    let out = eqgap(&[
        "evaluate",
        "--config",
        &config,
        "--model",
        model.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let steps = fs::read_to_string(dir.path().join("steps.csv")).unwrap();
    assert!(steps
        .starts_with("dataset,step,step_id,loss,inner_residual,boundary_residual,force_scale\n"));
    // All 20 notched steps are test steps.
    assert_eq!(steps.lines().count(), 21);

    let curves = fs::read_to_string(dir.path().join("curves.csv")).unwrap();
    assert!(curves.starts_with("experiment,set,step_id,applied,measured,predicted\n"));
    assert!(curves.contains("notched,top,"));

    let map = fs::read_to_string(dir.path().join("residual_map.csv")).unwrap();
    // Header plus one row per node of the notched mesh.
    assert_eq!(map.lines().count(), 222);
}

#[test]
fn evaluate_without_model_exits_two() {
    let dir = TempDir::new().unwrap();
    generate_defaults(dir.path());
    let config = write_run_config(dir.path());
    let out = eqgap(&["evaluate", "--config", &config]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("no model"));
}

#[test]
fn split_respects_overrides_and_writes_disjoint_sets() {
    let dir = TempDir::new().unwrap();
    generate_defaults(dir.path());
    let config = write_run_config(dir.path());
    let out_path = dir.path().join("split.json");
    let out = eqgap(&[
        "split",
        "--config",
        &config,
        "--n-train",
        "10",
        "--n-val",
        "3",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let split: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(split["train"].as_array().unwrap().len(), 10);
    assert_eq!(split["val"].as_array().unwrap().len(), 3);
    // 13 remaining strip steps plus 20 notched steps.
    assert_eq!(split["test"].as_array().unwrap().len(), 33);
}

#[test]
fn predict_maps_identity_to_zero_energy_and_stress() {
    let dir = TempDir::new().unwrap();
    generate_defaults(dir.path());
    let config = write_run_config(dir.path());
    let out = eqgap(&["train", "--config", &config, "--max-epochs", "5"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let input = dir.path().join("f.csv");
    fs::write(&input, "f11,f12,f21,f22\n1,0,0,1\n1.1,0,0,0.95\n").unwrap();
    let output = dir.path().join("pred.csv");
    let out = eqgap(&[
        "predict",
        "--model",
        dir.path().join("model.json").to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--output",
        output.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = fs::read_to_string(&output).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "f11,f12,f21,f22,w,p11,p12,p21,p22");
    assert_eq!(lines.next().unwrap(), "1,0,0,1,0,0,0,0,0");
}

#[test]
fn predict_rejects_non_positive_determinant_with_exit_four() {
    let dir = TempDir::new().unwrap();
    generate_defaults(dir.path());
    let config = write_run_config(dir.path());
    let out = eqgap(&["train", "--config", &config, "--max-epochs", "5"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let input = dir.path().join("f.csv");
    fs::write(&input, "f11,f12,f21,f22\n-1,0,0,1\n").unwrap();
    let out = eqgap(&[
        "predict",
        "--model",
        dir.path().join("model.json").to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--output",
        dir.path().join("pred.csv").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 4);
    assert!(stderr(&out).contains("not positive"));
}

#[test]
fn predict_rejects_malformed_header() {
    let dir = TempDir::new().unwrap();
    generate_defaults(dir.path());
    let config = write_run_config(dir.path());
    let out = eqgap(&["train", "--config", &config, "--max-epochs", "5"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let input = dir.path().join("f.csv");
    fs::write(&input, "fxx,f12,f21,f22\n1,0,0,1\n").unwrap();
    let out = eqgap(&[
        "predict",
        "--model",
        dir.path().join("model.json").to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--output",
        dir.path().join("pred.csv").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("f11,f12,f21,f22"));
}

#[test]
fn generate_is_idempotent() {
    let dir_a = TempDir::new().unwrap();
    let dir_b = TempDir::new().unwrap();
    generate_defaults(dir_a.path());
    generate_defaults(dir_b.path());
    for name in ["strip.dataset.json", "notched.dataset.json"] {
        let a = fs::read(dir_a.path().join(name)).unwrap();
        let b = fs::read(dir_b.path().join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn zero_threads_exits_two() {
    let out = eqgap(&["--threads", "0", "generate"]);
    assert_eq!(code(&out), 2);
}
