use std::fs;
use std::path::Path;
use std::process::Command;

use ergolab::operators::volterra_discrete;
use ergolab_cli::run::{self, Subcommand, TRAJECTORY_HEADER};
use ergolab_cli::{load_config, CliError, Experiment, ExperimentConfig, ResultManifest};
use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_ergolab");

fn experiment(json: &str) -> Experiment {
    Experiment::build(ExperimentConfig::from_json(json).unwrap()).unwrap()
}

fn build_err(json: &str) -> String {
    match ExperimentConfig::from_json(json).and_then(Experiment::build) {
        Ok(_) => panic!("config should be rejected"),
        Err(e) => e.to_string(),
    }
}

fn write_config(dir: &Path, json: &str) -> std::path::PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, json).unwrap();
    path
}

const MINIMAL: &str = r#"{
    "space": {"uniform": 4},
    "operators": {"T": {"kind": "koopman", "shift": 1}},
    "t": ["T"],
    "alpha": [1],
    "f": {"kind": "random", "seed": 5},
    "checkpoints": [4, 8, 16]
}"#;

const IDENTITY: &str = r#"{
    "space": {"mu": [0.25, 0.75]},
    "operators": {"I": {"kind": "identity"}},
    "t": ["I", "I"],
    "a": ["I"],
    "alpha": [1, 2],
    "f": {"kind": "values", "values": [[1, 0], [0, -2]]},
    "checkpoints": [1, 2, 5, 9]
}"#;

#[test]
fn minimal_config_loads() {
    let dir = tempfile::tempdir().unwrap();
    let exp = load_config(&write_config(dir.path(), MINIMAL)).unwrap();
    assert_eq!(exp.operators.len(), 1);
    assert_eq!(exp.problem.m(), 1);
    assert_eq!(exp.space.dim(), 4);
}

#[test]
fn alpha_outside_range_names_the_entry() {
    let bad = MINIMAL.replace(r#""alpha": [1],"#, r#""alpha": [2], "k": 1,"#);
    let err = build_err(&bad);
    assert!(err.contains("alpha[1] = 2"), "{err}");
}

#[test]
fn volterra_descriptor_matches_constructor() {
    let json = r#"{"space":{"uniform":64},"operators":{"V":{"kind":"volterra","d":64},
        "S":{"kind":"koopman","shift":3}},"t":["S"],"alpha":[1],"f":{"kind":"unit","atom":0}}"#;
    let exp = experiment(json);
    let ours = serde_json::to_string(&exp.operators["V"].to_data("grid")).unwrap();
    let reference = serde_json::to_string(&volterra_discrete(64).unwrap().to_data("grid")).unwrap();
    assert_eq!(ours.as_bytes(), reference.as_bytes());
}

#[test]
fn volterra_size_mismatch_is_rejected() {
    let json = r#"{"space":{"uniform":8},"operators":{"V":{"kind":"volterra","d":64}},
        "t":["V"],"alpha":[1],"f":{"kind":"unit","atom":0}}"#;
    assert!(build_err(json).contains("operators.V"));
}

#[test]
fn non_ds_operator_is_named_with_norms() {
    let json = r#"{"space":{"uniform":2},"operators":{"big":{"kind":"matrix","entries":[[2,0],[0,0],[0,0],[2,0]]}},
        "t":["big"],"alpha":[1],"f":{"kind":"unit","atom":0}}"#;
    let err = build_err(json);
    assert!(err.contains("big") && err.contains("L1 norm 2"), "{err}");
}

#[test]
fn schema_errors_name_the_field() {
    let err = build_err(&MINIMAL.replace(r#""alpha": [1],"#, ""));
    assert!(err.contains("alpha"), "{err}");
    let err = build_err(&MINIMAL.replace(r#""t": ["T"],"#, r#""t": ["T"], "colour": 1,"#));
    assert!(err.contains("colour"), "{err}");
}

#[test]
fn checkpoints_must_increase() {
    let err = build_err(&MINIMAL.replace("[4, 8, 16]", "[4, 4, 16]"));
    assert!(err.contains("checkpoints"), "{err}");
}

#[test]
fn identity_problem_has_zero_cauchy_gaps() {
    let dir = tempfile::tempdir().unwrap();
    let exp = experiment(IDENTITY);
    let manifest = run::run(&exp, Subcommand::Simulate, dir.path(), false).unwrap();
    let csv = fs::read_to_string(dir.path().join(&manifest.config_hash).join("trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(TRAJECTORY_HEADER));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4 * 2);
    for row in &rows {
        if row[0] != "1" {
            assert_eq!(row[5].parse::<f64>().unwrap(), 0.0);
        } else {
            assert_eq!(row[5], "");
        }
    }
    // the average of a constant orbit is f itself
    assert_eq!(rows[1][3].parse::<f64>().unwrap(), -2.0);
}

#[test]
fn swap_decomposes_into_two_reversible_directions() {
    let json = r#"{"space":{"uniform":2},"operators":{"swap":{"kind":"koopman","map":[1,0]}},
        "t":["swap"],"alpha":[1],"f":{"kind":"unit","atom":0}}"#;
    let dir = tempfile::tempdir().unwrap();
    let manifest = run::run(&experiment(json), Subcommand::Decompose, dir.path(), false).unwrap();
    let text = fs::read_to_string(dir.path().join(&manifest.config_hash).join("decompose_swap.json")).unwrap();
    let doc: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(doc["split"]["dim_reversible"], 2);
    assert_eq!(doc["split"]["dim_stable"], 0);
    assert_eq!(doc["invariants_hold"], true);
    let mut eig: Vec<f64> = doc["split"]["reversible_eigenvalues"]
        .as_array()
        .unwrap()
        .iter()
        .map(|z| z[0].as_f64().unwrap())
        .collect();
    eig.sort_by(f64::total_cmp);
    assert!((eig[0] + 1.0).abs() < 1e-12 && (eig[1] - 1.0).abs() < 1e-12);
}

#[test]
fn identical_runs_give_identical_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let exp = experiment(&fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/stable.json")).unwrap());
    let ma = run::run(&exp, Subcommand::Simulate, a.path(), false).unwrap();
    let mb = run::run(&exp, Subcommand::Simulate, b.path(), false).unwrap();
    for file in ["trajectory.csv", "trajectory.json", "config.json"] {
        let x = fs::read(a.path().join(&ma.config_hash).join(file)).unwrap();
        let y = fs::read(b.path().join(&mb.config_hash).join(file)).unwrap();
        assert_eq!(x, y, "{file}");
    }
}

#[test]
fn hash_ignores_key_order_and_whitespace() {
    let permuted = r#"{"checkpoints":[4,8,16],"f":{"seed":5,"kind":"random"},"alpha":[1],"t":["T"],
        "operators":{"T":{"shift":1,"kind":"koopman"}},"space":{"uniform":4}}"#;
    let a = ExperimentConfig::from_json(MINIMAL).unwrap();
    let b = ExperimentConfig::from_json(permuted).unwrap();
    assert_eq!(a.hash(), b.hash());
    let explicit_default = MINIMAL.replace(r#""alpha": [1],"#, r#""alpha": [1], "seed": 0, "variant": {"kind": "plain"},"#);
    assert_eq!(a.hash(), ExperimentConfig::from_json(&explicit_default).unwrap().hash());
}

#[test]
fn empty_schedule_gives_header_only_csv() {
    let dir = tempfile::tempdir().unwrap();
    let exp = experiment(&MINIMAL.replace("[4, 8, 16]", "[]"));
    let manifest = run::run(&exp, Subcommand::Simulate, dir.path(), false).unwrap();
    let csv = fs::read_to_string(dir.path().join(&manifest.config_hash).join("trajectory.csv")).unwrap();
    assert_eq!(csv, format!("{TRAJECTORY_HEADER}\n"));
}

#[test]
fn manifest_round_trips_and_validates() {
    let dir = tempfile::tempdir().unwrap();
    let exp = experiment(MINIMAL);
    run::run(&exp, Subcommand::Simulate, dir.path(), false).unwrap();
    let manifest = run::run(&exp, Subcommand::Check, dir.path(), false).unwrap();
    assert_eq!(manifest.runs.len(), 2);
    assert!(manifest.runs["check"].checks.values().all(|ok| *ok), "{:?}", manifest.runs["check"].checks);

    let result_dir = dir.path().join(&manifest.config_hash);
    let text = fs::read_to_string(result_dir.join("manifest.json")).unwrap();
    let parsed: ResultManifest = serde_json::from_str(&text).unwrap();
    assert_eq!(parsed, manifest);
    parsed.validate(&result_dir).unwrap();

    fs::write(result_dir.join("config.json"), MINIMAL.replace("\"seed\": 5", "\"seed\": 6")).unwrap();
    assert!(parsed.validate(&result_dir).is_err());
}

#[test]
fn reruns_need_force() {
    let dir = tempfile::tempdir().unwrap();
    let exp = experiment(MINIMAL);
    run::run(&exp, Subcommand::Simulate, dir.path(), false).unwrap();
    let err = run::run(&exp, Subcommand::Simulate, dir.path(), false).unwrap_err();
    assert!(matches!(err, CliError::AlreadyExists { .. }));
    run::run(&exp, Subcommand::Simulate, dir.path(), true).unwrap();
}

#[test]
fn split_and_weights_runs_write_their_reports() {
    let root = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/");
    let dir = tempfile::tempdir().unwrap();

    let exp = experiment(&fs::read_to_string(format!("{root}reversible.json")).unwrap());
    let manifest = run::run(&exp, Subcommand::Split, dir.path(), false).unwrap();
    assert!(manifest.failed_checks(Subcommand::Split).is_empty());
    let tree: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join(&manifest.config_hash).join("tree.json")).unwrap()).unwrap();
    assert_eq!(tree["nodes"][0]["id"], "");
    assert!(tree["nodes"].as_array().unwrap().iter().all(|n| n.get("epsilon_achieved").is_some()));

    let exp = experiment(&fs::read_to_string(format!("{root}weights.json")).unwrap());
    let manifest = run::run(&exp, Subcommand::Weights, dir.path(), false).unwrap();
    let csv = fs::read_to_string(dir.path().join(&manifest.config_hash).join("weights_ones.csv")).unwrap();
    assert_eq!(csv, "N,estimate\n16,1.0000000000000000e0\n256,1.0000000000000000e0\n4096,1.0000000000000000e0\n");
}

fn exit_code(args: &[&str]) -> i32 {
    Command::new(BIN).args(args).output().unwrap().status.code().unwrap()
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    let ok = write_config(dir.path(), MINIMAL);
    let ok = ok.to_str().unwrap();
    assert_eq!(exit_code(&["simulate", "--config", ok, "--out", out]), 0);
    assert_eq!(exit_code(&["simulate", "--config", ok, "--out", out]), 1);
    assert_eq!(exit_code(&["simulate", "--config", ok, "--out", out, "--force"]), 0);
    assert_eq!(exit_code(&["simulate", "--config", ok, "--out", out, "--seed", "9"]), 0);
    assert_eq!(exit_code(&["simulate", "--bogus"]), 1);

    let bad = dir.path().join("bad.json");
    fs::write(&bad, MINIMAL.replace(r#""alpha": [1],"#, r#""alpha": [0],"#)).unwrap();
    assert_eq!(exit_code(&["simulate", "--config", bad.to_str().unwrap(), "--out", out]), 1);

    let budget = dir.path().join("budget.json");
    let json = MINIMAL
        .replace(r#""alpha": [1],"#, r#""alpha": [1], "limits": {"naive_budget": 10},"#)
        .replace(r#""checkpoints": [4, 8, 16]"#, r#""checkpoints": [20], "variant": {"kind": "absolute"}"#);
    fs::write(&budget, json).unwrap();
    assert_eq!(exit_code(&["simulate", "--config", budget.to_str().unwrap(), "--out", out]), 2);
}

#[test]
fn seed_flag_changes_the_result_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MINIMAL);
    let out = dir.path().join("out");
    let run = |seed: &str| {
        let o = Command::new(BIN)
            .args(["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", seed])
            .output()
            .unwrap();
        assert!(o.status.success());
        String::from_utf8(o.stdout).unwrap().trim().to_string()
    };
    assert_ne!(run("1"), run("2"));
}
