//! End-to-end tests of the `resnest-lab` binary: exit codes, file formats,
//! rerun determinism, and the cross-command workflows.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_resnest-lab")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("resnest-lab-test-{name}"));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, body: serde_json::Value) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&body).unwrap()).unwrap();
    path
}

fn base_config(out: &Path) -> serde_json::Value {
    serde_json::json!({
        "model": "resnest",
        "architecture": {
            "n_in": 3, "m": 6, "n_out": 2, "l": 1,
            "k": [2], "hidden": [4], "activation": "tanh"
        },
        "problem": "p_phi",
        "loss": "squared",
        "schedule": {
            "optimizer": "sgd_nesterov", "lr": 0.05, "momentum": 0.9,
            "max_iters": 60000, "grad_tol": 1e-8, "trace_every": 10000
        },
        "data": {
            "kind": "linear", "n": 24, "noise_sigma": 0.1,
            "n_in": 3, "n_out": 2, "seed": 3
        },
        "seed": 11,
        "init_scale": 1.5,
        "output_dir": out.join("out")
    })
}

#[test]
fn gen_data_is_deterministic_and_round_trips() {
    let dir = scratch("gendata");
    let config = write_config(&dir, base_config(&dir));
    let first = run(&["gen-data", "--config", config.to_str().unwrap()]);
    assert!(first.status.success(), "{first:?}");
    let csv1 = std::fs::read(dir.join("out/data.csv")).unwrap();
    let spec1 = std::fs::read(dir.join("out/data.spec.json")).unwrap();

    let second = run(&["gen-data", "--config", config.to_str().unwrap()]);
    assert!(second.status.success());
    assert_eq!(csv1, std::fs::read(dir.join("out/data.csv")).unwrap());
    assert_eq!(spec1, std::fs::read(dir.join("out/data.spec.json")).unwrap());

    // the file parses back to the same dataset the spec generates
    let parsed = resnest_core::data::read_csv(&dir.join("out/data.csv")).unwrap();
    let spec: resnest_core::data::DataSpec =
        serde_json::from_slice(&std::fs::read(dir.join("out/data.spec.json")).unwrap()).unwrap();
    assert_eq!(parsed, resnest_core::data::generate(&spec).unwrap());
}

#[test]
fn train_l0_matches_least_squares_and_is_deterministic() {
    let dir = scratch("train-l0");
    let mut body = base_config(&dir);
    body["architecture"] = serde_json::json!({
        "n_in": 3, "m": 6, "n_out": 2, "l": 0, "k": [], "hidden": [], "activation": "tanh"
    });
    let config = write_config(&dir, body);
    let out = run(&["train", "--config", config.to_str().unwrap()]);
    assert!(out.status.success(), "{out:?}");
    let bytes1 = std::fs::read(dir.join("out/train_result.json")).unwrap();

    let result: serde_json::Value = serde_json::from_slice(&bytes1).unwrap();
    assert_eq!(result["converged"], serde_json::json!(true));
    let final_risk = result["final_risk"].as_f64().unwrap();

    // least-squares oracle on the same dataset
    let spec: resnest_core::data::DataSpec =
        serde_json::from_value(base_config(&dir)["data"].clone()).unwrap();
    let data = resnest_core::data::generate(&spec).unwrap();
    let (_, lin_risk) =
        resnest_core::optimize::best_linear_predictor(&data, resnest_core::risk::Loss::Squared)
            .unwrap();
    assert!((final_risk - lin_risk).abs() <= 1e-8 * (1.0 + lin_risk));

    let rerun = run(&["train", "--config", config.to_str().unwrap()]);
    assert!(rerun.status.success());
    assert_eq!(bytes1, std::fs::read(dir.join("out/train_result.json")).unwrap());
}

#[test]
fn train_p_phi_freezes_phi_bitwise() {
    let dir = scratch("train-frozen");
    let config = write_config(&dir, base_config(&dir));
    let out = run(&["train", "--config", config.to_str().unwrap()]);
    assert!(out.status.success(), "{out:?}");
    let init: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join("out/init_params.json")).unwrap()).unwrap();
    let result: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join("out/train_result.json")).unwrap()).unwrap();
    let final_params = &result["final_params"];
    assert_eq!(init["w0"], final_params["w0"]);
    assert_eq!(init["blocks"], final_params["blocks"]);
    // the prediction weights did move
    assert_ne!(init["w_out"], final_params["w_out"]);
}

#[test]
fn train_reads_csv_input() {
    let dir = scratch("train-csv");
    let gen_config = write_config(&dir, base_config(&dir));
    assert!(run(&["gen-data", "--config", gen_config.to_str().unwrap()]).status.success());

    let mut body = base_config(&dir);
    body["data"] = serde_json::json!({ "csv_path": dir.join("out/data.csv") });
    body["output_dir"] = serde_json::json!(dir.join("out-csv"));
    let config = dir.join("config-csv.json");
    std::fs::write(&config, serde_json::to_string_pretty(&body).unwrap()).unwrap();
    let out = run(&["train", "--config", config.to_str().unwrap()]);
    assert!(out.status.success(), "{out:?}");
}

#[test]
fn verify_single_check_and_unknown_check() {
    let dir = scratch("verify");
    let mut body = base_config(&dir);
    body["verify"] = serde_json::json!({ "n_triples": 12 });
    let config = write_config(&dir, body);
    let out = run(&[
        "verify",
        "--config",
        config.to_str().unwrap(),
        "--checks",
        "erlb",
    ]);
    assert!(out.status.success(), "{out:?}");
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join("out/report.json")).unwrap()).unwrap();
    assert_eq!(report["checks"].as_array().unwrap().len(), 1);
    assert_eq!(report["checks"][0]["name"], "erlb_epsilon_nonnegative");
    assert_eq!(report["version"], serde_json::json!(1));
    assert!(dir.join("out/report.md").exists());

    let bad = run(&[
        "verify",
        "--config",
        config.to_str().unwrap(),
        "--checks",
        "nonsense",
    ]);
    assert_eq!(bad.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&bad.stderr);
    assert!(stderr.contains("erlb"), "should list valid names: {stderr}");
}

#[test]
fn verify_report_is_byte_deterministic() {
    let dir = scratch("verify-det");
    let mut body = base_config(&dir);
    body["verify"] = serde_json::json!({ "n_triples": 10, "n_s_points": 3, "n_scan": 5 });
    let config = write_config(&dir, body);
    let args = [
        "verify",
        "--config",
        config.to_str().unwrap(),
        "--checks",
        "assumptions,erlb,curvature,unpredictability,embedding",
    ];
    assert!(run(&args).status.success());
    let bytes1 = std::fs::read(dir.join("out/report.json")).unwrap();
    assert!(run(&args).status.success());
    assert_eq!(bytes1, std::fs::read(dir.join("out/report.json")).unwrap());
}

#[test]
fn hessian_s_point_is_indefinite_and_exact_fit_is_psd() {
    let dir = scratch("hessian");
    let config = write_config(&dir, base_config(&dir));
    let out = run(&[
        "hessian",
        "--config",
        config.to_str().unwrap(),
        "--point-source",
        "s-point",
    ]);
    assert!(out.status.success(), "{out:?}");
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join("out/hessian_report.json")).unwrap())
            .unwrap();
    assert_eq!(report["classification"], "indefinite");
    assert_eq!(report["schur"]["psd_possible"], serde_json::json!(false));

    // exact fit: teacher parameters on noise-free teacher data
    let teacher_arch = serde_json::json!({
        "n_in": 3, "m": 6, "n_out": 2, "l": 1, "k": [2], "hidden": [4], "activation": "tanh"
    });
    let mut body = base_config(&dir);
    body["data"] = serde_json::json!({
        "kind": "teacher_resnest", "n": 24, "noise_sigma": 0.0,
        "n_in": 3, "n_out": 2, "seed": 5,
        "teacher_resnest": teacher_arch
    });
    body["output_dir"] = serde_json::json!(dir.join("out-fit"));
    let config2 = dir.join("config-fit.json");
    std::fs::write(&config2, serde_json::to_string_pretty(&body).unwrap()).unwrap();

    // write the teacher itself as the probe point
    let spec: resnest_core::data::DataSpec = serde_json::from_value(body["data"].clone()).unwrap();
    let teacher = resnest_core::data::teacher_resnest_params(&spec).unwrap();
    let point = dir.join("teacher.json");
    std::fs::write(
        &point,
        serde_json::to_string_pretty(&resnest_core::optimize::ModelParams::Resnest(teacher))
            .unwrap(),
    )
    .unwrap();
    let out2 = run(&[
        "hessian",
        "--config",
        config2.to_str().unwrap(),
        "--point-source",
        "file",
        "--point",
        point.to_str().unwrap(),
    ]);
    assert!(out2.status.success(), "{out2:?}");
    let report2: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join("out-fit/hessian_report.json")).unwrap())
            .unwrap();
    assert_eq!(report2["classification"], "psd");
}

#[test]
fn embed_emits_equivalent_resnest() {
    let dir = scratch("embed");
    let mut body = base_config(&dir);
    body["dense_architecture"] = serde_json::json!({
        "n_in": 3, "n_out": 2, "l": 2, "d": [2, 3], "hidden": [4, 4], "activation": "tanh"
    });
    let config = write_config(&dir, body);
    let out = run(&["embed", "--config", config.to_str().unwrap()]);
    assert!(out.status.success(), "{out:?}");
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join("out/embed_report.json")).unwrap()).unwrap();
    assert!(report["max_abs_gap"].as_f64().unwrap() <= 1e-10);
    // dimension echo: M = N_in + sum D_i
    assert_eq!(report["m"], serde_json::json!(8));
    assert_eq!(report["rank_check_ok"], serde_json::json!(true));

    // the emitted parameter file loads and matches on fresh inputs
    let params: resnest_core::optimize::ModelParams = serde_json::from_slice(
        &std::fs::read(dir.join("out/resnest_params.json")).unwrap(),
    )
    .unwrap();
    assert!(matches!(params, resnest_core::optimize::ModelParams::Resnest(_)));
}

#[test]
fn verify_failure_exits_one() {
    let dir = scratch("verify-fail");
    let mut body = base_config(&dir);
    // M = 1 < N_o = 2 violates the geometric assumption
    body["architecture"] = serde_json::json!({
        "n_in": 3, "m": 1, "n_out": 2, "l": 0, "k": [], "hidden": [], "activation": "tanh"
    });
    let config = write_config(&dir, body);
    let out = run(&[
        "verify",
        "--config",
        config.to_str().unwrap(),
        "--checks",
        "assumptions",
    ]);
    assert_eq!(out.status.code(), Some(1), "{out:?}");
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join("out/report.json")).unwrap()).unwrap();
    assert_eq!(report["checks"][0]["status"], "fail");
}

#[test]
fn exit_codes_for_divergence_and_bad_config() {
    let dir = scratch("exitcodes");
    let mut body = base_config(&dir);
    body["schedule"]["lr"] = serde_json::json!(1e9);
    body["schedule"]["max_iters"] = serde_json::json!(200);
    let config = write_config(&dir, body);
    let out = run(&["train", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{out:?}");
    assert!(String::from_utf8_lossy(&out.stderr).contains("lowering lr"));

    let bad = dir.join("bad.json");
    std::fs::write(&bad, r#"{ "model": "resnest", "zzz_unknown": 1 }"#).unwrap();
    let out2 = run(&["train", "--config", bad.to_str().unwrap()]);
    assert_eq!(out2.status.code(), Some(2));

    let missing = run(&["train", "--config", dir.join("absent.json").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(4), "{missing:?}");
}
