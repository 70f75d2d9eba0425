use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn rlvae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rlvae")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data/small_molecules.csv")
}

const TINY: &str = r#"{
  "model": {"hidden_dim": 8, "latent_dim": 8, "state_dim": 8, "value_hidden": 8},
  "warmup": 400,
  "checkpoint_every": 25
}"#;

/// Manifest of ≤4-heavy-atom molecules and a tiny desk config.
fn setup(dir: &Path) -> (PathBuf, PathBuf) {
    let manifest = dir.join("manifest.csv");
    let o = rlvae(&[
        "ingest",
        "--input",
        corpus().to_str().unwrap(),
        "--out",
        manifest.to_str().unwrap(),
        "--max-heavy-atoms",
        "4",
        "--limit",
        "300",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = dir.join("tiny.json");
    fs::write(&cfg, TINY).unwrap();
    (manifest, cfg)
}

fn train(manifest: &Path, cfg: &Path, out: &Path, steps: &str, threads: &str) -> Output {
    rlvae(&[
        "--config",
        cfg.to_str().unwrap(),
        "--threads",
        threads,
        "train",
        "--preset",
        "desk",
        "--data",
        manifest.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--steps",
        steps,
    ])
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

#[test]
fn canonicalize_prints_canonical_form() {
    let o = rlvae(&["canonicalize", "OCC"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "CCO\n");
}

#[test]
fn editdist_counts_one_addition() {
    let o = rlvae(&["editdist", "--from", "C", "--to", "CC", "--max-steps", "3"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "1");
}

#[test]
fn exit_codes() {
    assert_eq!(rlvae(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(rlvae(&["canonicalize", "--bogus-flag", "C"]).status.code(), Some(1));
    assert_eq!(rlvae(&["canonicalize", "C(("]).status.code(), Some(2));
    assert_eq!(rlvae(&["ingest", "--input", "/nonexistent/x.smi", "--out", "/tmp/x.csv"]).status.code(), Some(2));
    assert_eq!(rlvae(&["--help"]).status.code(), Some(0));
}

#[test]
fn small_commands_produce_documented_output() {
    let o = rlvae(&["similarity", "CCO", "CCO"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["reward"], 1.0);
    let o = rlvae(&["fingerprint", "CCO"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["morgan"].as_array().is_some_and(|a| !a.is_empty()));
    let o = rlvae(&["episode", "CC=O"]);
    let text = stdout(&o);
    assert!(text.starts_with("t,action,state,reward,terminal\n"));
    assert_eq!(text.lines().count(), 21);
    assert!(text.lines().last().unwrap().ends_with(",1"));
}

#[test]
fn zero_steps_writes_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, cfg) = setup(dir.path());
    let out = dir.path().join("run");
    let o = train(&manifest, &cfg, &out, "0", "1");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("checkpoint_00000000.bin").exists());
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics, "step,lr,epsilon,td_loss,kl,buffer_size,idealized_failures\n");
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, _) = setup(dir.path());
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"gamma": 0.5, "no_such_field": 1}"#).unwrap();
    let o = train(&manifest, &cfg, &dir.path().join("run"), "0", "1");
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn training_is_byte_identical_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, cfg) = setup(dir.path());
    let mut runs = Vec::new();
    for (k, threads) in ["1", "1", "2"].iter().enumerate() {
        let out = dir.path().join(format!("run{k}"));
        let o = train(&manifest, &cfg, &out, "500", threads);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        runs.push(dir_bytes(&out));
    }
    assert!(runs[0].contains_key("checkpoint_00000500.bin"));
    assert_eq!(runs[0].len(), 23);
    assert!(runs[0] == runs[1], "repeat run differs");
    assert!(runs[0] == runs[2], "thread count changed the output");

    // Downstream experiments on the trained checkpoint.
    let ck = dir.path().join("run0/checkpoint_00000500.bin");
    let ck = ck.to_str().unwrap();
    let m = manifest.to_str().unwrap();
    let eval_csv = dir.path().join("eval.csv");
    let o = rlvae(&["evaluate", "--checkpoint", ck, "--data", m, "--split", "test", "--out", eval_csv.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(summary["molecules"], 30);
    let text = fs::read_to_string(&eval_csv).unwrap();
    assert!(text.starts_with("id,input_smiles,output_smiles,exact_match,tanimoto,edit_distance\n"));
    assert_eq!(text.lines().count(), 31);

    let sweep = dir.path().join("sweep.csv");
    let args = ["perturb", "--checkpoint", ck, "--data", m, "--out", sweep.to_str().unwrap(), "--starts", "2", "--repeats", "3"];
    let o = rlvae(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&sweep).unwrap();
    assert!(text.starts_with("start_id,factor,repeat,cosine_distance,euclidean_distance,tanimoto_morgan_r3,output_smiles\n"));
    assert_eq!(text.lines().count(), 1 + 2 * 100 * 3);
    let again = dir.path().join("sweep2.csv");
    let mut args2 = args;
    args2[6] = again.to_str().unwrap();
    assert!(rlvae(&args2).status.success());
    assert_eq!(fs::read(&sweep).unwrap(), fs::read(&again).unwrap());

    let grid = dir.path().join("grid.csv");
    let o = rlvae(&["explore", "--checkpoint", ck, "--smiles", "CCO", "--out", grid.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&grid).unwrap();
    assert!(text.starts_with("i,j,coeff_a,coeff_b,smiles\n"));
    assert_eq!(text.lines().count(), 122);
}
