use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;
use signflow::dataset::LabelMap;
use signflow::landmarks::{
    encode_frame_record, encode_sequence, FrameFeatures, GestureSequence, FEATURE_DIM,
};
use signflow::nn::{
    encode_model, init_params, Checkpoint, LayerParams, ModelParams, ModelSpec, ParamTensors,
};

fn signflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_signflow"))
        .args(args)
        .env_remove("SIGNFLOW_SEED")
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn json_lines(bytes: &[u8]) -> Vec<Value> {
    String::from_utf8_lossy(bytes)
        .lines()
        .map(|l| serde_json::from_str(l).expect("each line is JSON"))
        .collect()
}

fn write_checkpoint(dir: &Path, params: ModelParams, labels: LabelMap) -> PathBuf {
    let file = dir.join("model.slrm");
    let ckpt = Checkpoint::new(params, labels, 0).unwrap();
    fs::write(&file, encode_model(&ckpt)).unwrap();
    file
}

/// Full-size network whose output bias makes `class` win with p ≈ 1 for
/// any input.
fn constant_model(dir: &Path, class: usize) -> PathBuf {
    let spec = ModelSpec::standard(30, FEATURE_DIM, 45);
    let mut params = ModelParams::zeros(&spec).unwrap();
    if let Some(LayerParams::Dense(out)) = params.layers_mut().last_mut() {
        out.b[class] = 20.0;
    }
    write_checkpoint(dir, params, LabelMap::standard())
}

fn sequence_file(dir: &Path, name: &str, frames: usize) -> PathBuf {
    let frames = (0..frames)
        .map(|t| FrameFeatures::new(vec![t as f32 / 30.0; FEATURE_DIM]).unwrap())
        .collect();
    let seq = GestureSequence::new(frames, None).unwrap();
    let file = dir.join(name);
    fs::write(&file, encode_sequence(&seq)).unwrap();
    file
}

fn record_stream(frames: usize) -> Vec<u8> {
    (0..frames)
        .flat_map(|t| {
            encode_frame_record(
                &FrameFeatures::new(vec![(t % 7) as f32 * 0.1; FEATURE_DIM]).unwrap(),
            )
        })
        .collect()
}

#[test]
fn inspect_reports_standard_param_count() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ModelSpec::standard(30, FEATURE_DIM, 45);
    let model = write_checkpoint(
        dir.path(),
        init_params(&spec, 1).unwrap(),
        LabelMap::standard(),
    );
    let info = stdout_json(&signflow(&["inspect", "--model", path(&model)]));
    assert_eq!(info["param_count"], 598_061);
    assert_eq!(
        info["labels"]["Hello"],
        LabelMap::standard().id("Hello").unwrap()
    );
    assert_eq!(info["seed"], 0);
}

#[test]
fn predict_classifies_a_thirty_frame_file() {
    let dir = tempfile::tempdir().unwrap();
    let hello = LabelMap::standard().id("Hello").unwrap();
    let model = constant_model(dir.path(), hello);
    let file = sequence_file(dir.path(), "seq.lmk", 30);
    let out = stdout_json(&signflow(&[
        "predict",
        "--model",
        path(&model),
        path(&file),
    ]));
    assert_eq!(out["label"], "Hello");
    assert_eq!(out["class_id"], hello);
    assert!(out["p"].as_f64().unwrap() > 0.99);
    assert_eq!(out["probs"].as_array().unwrap().len(), 45);
}

#[test]
fn predict_on_29_frames_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let model = constant_model(dir.path(), 0);
    let file = sequence_file(dir.path(), "short.lmk", 29);
    let out = signflow(&["predict", "--model", path(&model), path(&file)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("29 frames"), "{err}");
}

#[test]
fn malformed_inputs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.slrm");
    fs::write(&junk, b"not a model").unwrap();
    assert_eq!(
        signflow(&["inspect", "--model", path(&junk)]).status.code(),
        Some(2)
    );
    let missing = dir.path().join("missing.slrm");
    assert_eq!(
        signflow(&["inspect", "--model", path(&missing)])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(signflow(&["inspect", "--bogus"]).status.code(), Some(1));
    assert_eq!(signflow(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(signflow(&[]).status.code(), Some(1));
    assert_eq!(signflow(&["--help"]).status.code(), Some(0));
}

#[test]
fn stream_over_stdin_emits_after_warm_up() {
    let dir = tempfile::tempdir().unwrap();
    let hello = LabelMap::standard().id("Hello").unwrap();
    let model = constant_model(dir.path(), hello);
    let mut child = Command::new(env!("CARGO_BIN_EXE_signflow"))
        .args(["stream", "--model", path(&model), "--verbose"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(&record_stream(60))
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let lines = json_lines(&out.stdout);
    let predictions: Vec<_> = lines.iter().filter(|l| l.get("label").is_some()).collect();
    let words: Vec<_> = lines.iter().filter(|l| l.get("word").is_some()).collect();
    // frames 30..60 are predicted, the tenth agreement lands on frame index 38
    assert_eq!(predictions.len(), 31);
    assert_eq!(predictions[0]["t"], 29);
    assert_eq!(words.len(), 1);
    assert_eq!(words[0]["word"], "Hello");
    assert_eq!(words[0]["t"], 38);
    assert!(String::from_utf8_lossy(&out.stderr).contains("transcript: Hello"));
}

#[test]
fn stream_before_warm_up_prints_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let model = constant_model(dir.path(), 0);
    let mut child = Command::new(env!("CARGO_BIN_EXE_signflow"))
        .args(["stream", "--model", path(&model), "--verbose"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(&record_stream(29))
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
}

#[test]
fn stream_rejects_foreign_dimension() {
    let dir = tempfile::tempdir().unwrap();
    let model = constant_model(dir.path(), 0);
    let mut bad = vec![0x4C];
    bad.extend_from_slice(&100u32.to_le_bytes());
    bad.extend_from_slice(&[0; 400]);
    let mut child = Command::new(env!("CARGO_BIN_EXE_signflow"))
        .args(["stream", "--model", path(&model)])
        .stdin(Stdio::piped())
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(&bad).unwrap();
    let out = child.wait_with_output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dim 100"));
}

#[test]
fn stream_over_tcp() {
    let dir = tempfile::tempdir().unwrap();
    let bye = LabelMap::standard().id("Bye-Bye").unwrap();
    let model = constant_model(dir.path(), bye);
    let mut child = Command::new(env!("CARGO_BIN_EXE_signflow"))
        .args(["stream", "--model", path(&model), "--listen", "127.0.0.1:0"])
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stderr = BufReader::new(child.stderr.take().unwrap());
    let mut line = String::new();
    stderr.read_line(&mut line).unwrap();
    let addr = line
        .trim()
        .strip_prefix("listening on ")
        .unwrap_or_else(|| panic!("unexpected banner {line:?}"))
        .to_string();

    let mut conn = TcpStream::connect(&addr).unwrap();
    conn.write_all(&record_stream(45)).unwrap();
    drop(conn);

    let mut stdout = String::new();
    child
        .stdout
        .take()
        .unwrap()
        .read_to_string(&mut stdout)
        .unwrap();
    assert!(child.wait().unwrap().success());
    let words = json_lines(stdout.as_bytes());
    assert_eq!(words.len(), 1);
    assert_eq!(words[0]["word"], "Bye-Bye");
    assert_eq!(words[0]["t"], 38);
}

#[test]
fn dataset_synth_scan_train_eval() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let summary = stdout_json(&signflow(&[
        "dataset",
        "synth",
        "--out",
        path(&corpus),
        "--classes",
        "2",
        "--videos",
        "4",
        "--frames",
        "2",
        "--dims",
        "4",
        "--seed",
        "3",
    ]));
    assert_eq!(summary["files"], 8);
    assert!(corpus.join("class00").join("00.lmk").is_file());
    assert!(corpus.join("labels.json").is_file());

    let stats = stdout_json(&signflow(&[
        "dataset",
        "scan",
        "--root",
        path(&corpus),
        "--videos",
        "4",
    ]));
    assert_eq!(stats["files"], 8, "{stats}");
    assert_eq!(stats["short_labels"].as_array().unwrap().len(), 0);

    // every flag at its default except what the tiny corpus needs
    let model = dir.path().join("m.slrm");
    let out = signflow(&[
        "train",
        "--data",
        path(&corpus),
        "--frames",
        "2",
        "--model",
        path(&model),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let log = json_lines(&out.stdout);
    assert_eq!(log.len(), 300);
    assert_eq!(log[299]["epoch"], 300);
    for (i, rec) in log.iter().enumerate() {
        let keys: Vec<_> = rec.as_object().unwrap().keys().cloned().collect();
        assert_eq!(
            keys,
            ["epoch", "loss", "categorical_accuracy", "seconds"],
            "line {i}"
        );
    }

    let eval = stdout_json(&signflow(&[
        "eval",
        "--data",
        path(&corpus),
        "--frames",
        "2",
        "--model",
        path(&model),
        "--all",
    ]));
    assert_eq!(eval["samples"], 8);
    assert_eq!(eval["confusion"].as_array().unwrap().len(), 2);
    let accuracy = eval["accuracy"].as_f64().unwrap();
    assert!(eval["accuracy_percent"].as_str().unwrap().ends_with('%'));
    assert!((0.0..=1.0).contains(&accuracy));
}

#[test]
fn seed_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let synth = |name: &str, env_seed: Option<&str>| {
        let out = dir.path().join(name);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_signflow"));
        cmd.args([
            "dataset",
            "synth",
            "--out",
            path(&out),
            "--classes",
            "1",
            "--videos",
            "1",
        ])
        .args(["--frames", "1", "--dims", "3"])
        .env_remove("SIGNFLOW_SEED");
        if let Some(s) = env_seed {
            cmd.env("SIGNFLOW_SEED", s);
        }
        assert!(cmd.output().unwrap().status.success());
        fs::read(out.join("class00").join("00.lmk")).unwrap()
    };
    let by_env = synth("a", Some("9"));
    let by_flag = {
        let out = dir.path().join("b");
        assert!(signflow(&[
            "dataset",
            "synth",
            "--out",
            path(&out),
            "--classes",
            "1",
            "--videos",
            "1",
            "--frames",
            "1",
            "--dims",
            "3",
            "--seed",
            "9",
        ])
        .status
        .success());
        fs::read(out.join("class00").join("00.lmk")).unwrap()
    };
    assert_eq!(by_env, by_flag);
    assert_ne!(by_env, synth("c", None));
}

#[test]
fn scan_rejects_corrupt_file_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let label = dir.path().join("Hello");
    fs::create_dir(&label).unwrap();
    fs::write(label.join("00.lmk"), b"LMK1garbage").unwrap();
    let out = signflow(&["dataset", "scan", "--root", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("0.lmk"));
}
