use std::path::Path;
use std::process::{Command, Output};

fn lirlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lirlab")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn two_beliefs(dir: &Path, second: [f64; 2]) -> std::path::PathBuf {
    let doc = serde_json::json!({
        "variables": [{"id": "X", "size": 2}],
        "arcs": [
            {"id": "p", "tgt": ["X"], "kind": "constant_table", "table": [0.9, 0.1]},
            {"id": "q", "tgt": ["X"], "kind": "constant_table", "table": second}
        ]
    });
    let p = dir.join("pdg.json");
    std::fs::write(&p, doc.to_string()).unwrap();
    p
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&lirlab(&["--help"])), 0);
    assert_eq!(code(&lirlab(&["--version"])), 0);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&lirlab(&["inconsistency", "--no-such-flag"])), 2);
    assert_eq!(code(&lirlab(&["verify", "nonsense"])), 2);
    assert_eq!(code(&lirlab(&["gfn", "modes", "--env", "spiral"])), 2);
}

#[test]
fn generated_pdg_round_trips_through_inconsistency() {
    let dir = tempfile::tempdir().unwrap();
    let pdg = dir.path().join("g.json");
    let out = dir.path().join("r.json");
    assert_eq!(code(&lirlab(&["gen", "--spec", "chain_4v_3e", "--seed", "5", "--out", path(&pdg)])), 0);
    assert_eq!(code(&lirlab(&["inconsistency", path(&pdg), "--out", path(&out)])), 0);
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert!(r["value"].as_f64().unwrap() >= -1e-9);
    let total: f64 = r["mu_star"]["probs"].as_array().unwrap().iter().map(|p| p.as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);
}

#[test]
fn two_belief_value_on_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let p = two_beliefs(dir.path(), [0.1, 0.9]);
    let o = lirlab(&["inconsistency", path(&p), "--precise"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((r["value"].as_f64().unwrap() - 1.0216512475319814).abs() < 1e-8);
}

#[test]
fn invalid_document_exits_one_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let p = two_beliefs(dir.path(), [0.2, 0.9]);
    let o = lirlab(&["inconsistency", path(&p)]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("row sums to"));
}

#[test]
fn config_file_values_apply_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"seed": 4, "gfn_modes": {"env": "xor", "d": 2, "height": 8}}"#).unwrap();
    let from_file = lirlab(&["--config", path(&cfg), "gfn", "modes"]);
    let flagged = lirlab(&["--config", path(&cfg), "gfn", "modes", "--env", "original"]);
    assert_eq!(code(&from_file), 0);
    assert_eq!(code(&flagged), 0);
    assert_ne!(from_file.stdout, flagged.stdout);
    let direct = lirlab(&["gfn", "modes", "--env", "xor", "--d", "2", "--height", "8"]);
    assert_eq!(from_file.stdout, direct.stdout);
}

#[test]
fn config_typos_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"gfn_modes": {"hieght": 8}}"#).unwrap();
    let o = lirlab(&["--config", path(&cfg), "gfn", "modes"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn meta_json_lands_next_to_primary_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sub").join("run.jsonl");
    let o = lirlab(&["gfn", "train", "--iters", "20", "--eval-every", "10", "--seed", "9", "--out", path(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let meta: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("sub").join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 9);
    assert_eq!(meta["command"], "gfn train");
    let lines = std::fs::read_to_string(&out).unwrap();
    assert!(lines.lines().all(|l| serde_json::from_str::<serde_json::Value>(l).is_ok()));
}

#[test]
fn explicit_meta_path_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let meta = dir.path().join("m.json");
    let out = dir.path().join("modes.json");
    assert_eq!(code(&lirlab(&["--meta", path(&meta), "gfn", "modes", "--d", "2", "--height", "8", "--out", path(&out)])), 0);
    assert!(meta.exists());
    assert!(!dir.path().join("meta.json").exists());
}

#[test]
fn verify_emits_one_report_per_trial() {
    let o = lirlab(&["verify", "gfn-identity", "--seed", "2", "--trials", "3"]);
    assert_eq!(code(&o), 0);
    let reports: Vec<serde_json::Value> =
        String::from_utf8(o.stdout).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(reports.len(), 3);
    assert!(reports.iter().all(|r| r["pass"] == true));
}

#[test]
fn thread_count_does_not_change_results() {
    let run = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_lirlab"))
            .env("LIRLAB_THREADS", threads)
            .args(["verify", "em", "--seed", "3", "--trials", "4"])
            .output()
            .unwrap()
            .stdout
    };
    assert_eq!(run("1"), run("3"));
    let bad = Command::new(env!("CARGO_BIN_EXE_lirlab")).env("LIRLAB_THREADS", "0").args(["gfn", "modes"]).output().unwrap();
    assert_eq!(code(&bad), 2);
}
