use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"{
  "lstm": {"hidden": 12, "layers": 2, "init_scale": 0.08, "forget_bias": 1.0},
  "train": {"batch_size": 8, "dropout": 0.5, "eval_every": 10, "patience": 5, "max_iterations": 20,
            "clip_norm": 5.0, "adam": {"lr": 0.001, "beta1": 0.9, "beta2": 0.999, "epsilon": 1e-8}, "seed": 0}
}"#;

fn hrnn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hrnn"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("run hrnn")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = hrnn(dir, args);
    assert!(
        out.status.success(),
        "hrnn {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn pipeline(dir: &Path, work: &str) {
    let common = ["--config", "cfg.json", "--seed", "7", "--work-dir", work];
    for cmd in [&["ingest", "corpus"][..], &["profiles"], &["train", "--chords"], &["generate", "--bars", "16", "--mode", "sample"]] {
        ok(dir, &[&common[..], cmd].concat());
    }
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), CONFIG).unwrap();
    ok(dir.path(), &["--seed", "3", "synth-corpus", "corpus", "--pieces", "24", "--odd", "1"]);
    dir
}

#[test]
fn empty_corpus_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("empty")).unwrap();
    let out = hrnn(dir.path(), &["ingest", "empty"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("work").exists());
}

#[test]
fn bad_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.json"), r#"{"no_such_field": 1}"#).unwrap();
    let out = hrnn(dir.path(), &["--config", "bad.json", "profiles"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_artifacts_name_the_producing_command() {
    let dir = setup();
    let out = hrnn(dir.path(), &["profiles"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("manifest.json") && err.contains("hrnn ingest"), "{err}");

    ok(dir.path(), &["ingest", "corpus"]);
    let out = hrnn(dir.path(), &["train"]);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bar.json") && err.contains("hrnn profiles"), "{err}");
    let out = hrnn(dir.path(), &["generate"]);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("model") && err.contains("hrnn train"), "{err}");
}

#[test]
fn ingest_is_idempotent_and_reports_rejections() {
    let dir = setup();
    let first = ok(dir.path(), &["ingest", "corpus"]);
    let manifest = fs::read(dir.path().join("work/manifest.json")).unwrap();
    ok(dir.path(), &["ingest", "corpus"]);
    assert_eq!(manifest, fs::read(dir.path().join("work/manifest.json")).unwrap());
    assert!(first.contains("24 accepted, 2 rejected"), "{first}");
    assert!(first.contains("weak-beat start") && first.contains("time-signature"), "{first}");
}

#[test]
fn same_seed_same_bytes() {
    let dir = setup();
    pipeline(dir.path(), "a");
    pipeline(dir.path(), "b");
    let p = dir.path();
    for file in ["gen/seed7.mid", "gen/seed7.json", "model/note.ckpt", "model/manifest.json", "codebooks/beat.json"] {
        assert_eq!(fs::read(p.join("a").join(file)).unwrap(), fs::read(p.join("b").join(file)).unwrap(), "{file}");
    }
    let midi = fs::read(p.join("a/gen/seed7.mid")).unwrap();
    assert_eq!(&midi[..4], b"MThd");
    let record: serde_json::Value = serde_json::from_slice(&fs::read(p.join("a/gen/seed7.json")).unwrap()).unwrap();
    assert_eq!(record["grid"].as_array().unwrap().len(), 256);
    let hash = record["provenance"]["config_hash"].as_str().unwrap();
    assert!(midi.windows(hash.len()).any(|w| w == hash.as_bytes()));
}

#[test]
fn fixed_beat_profiles_are_tiled_and_exported() {
    let dir = setup();
    let p = dir.path();
    ok(p, &["--config", "cfg.json", "ingest", "corpus"]);
    ok(p, &["--config", "cfg.json", "profiles"]);
    ok(p, &["--config", "cfg.json", "train"]);
    ok(p, &["--config", "cfg.json", "generate", "--bars", "2", "--name", "fixed", "--fixed-beat-profiles", "2,1"]);
    let record: serde_json::Value = serde_json::from_slice(&fs::read(p.join("work/gen/fixed.json")).unwrap()).unwrap();
    let beats: Vec<u64> = record["beat_profiles"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    assert_eq!(beats, [2, 1, 2, 1, 2, 1, 2, 1]);

    let bad = hrnn(p, &["--config", "cfg.json", "generate", "--fixed-beat-profiles", "x"]);
    assert_eq!(bad.status.code(), Some(2));

    ok(p, &["export-midi", "work/gen/fixed.json", "--out", "again.mid"]);
    assert_eq!(fs::read(p.join("work/gen/fixed.mid")).unwrap(), fs::read(p.join("again.mid")).unwrap());
    ok(p, &["export-midi", "work/gen/fixed.json", "--sustain"]);
    let held = fs::read(p.join("work/gen/fixed_sustain.mid")).unwrap();
    assert_eq!(&held[..4], b"MThd");
}
