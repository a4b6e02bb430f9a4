use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SUBCOMMANDS: [&str; 7] = ["phonemize", "prepare", "vocab", "train", "translate", "score", "compare"];

fn toy_config() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.toml")
}

/// A fast variant of the bundled experiment writing into `dir`.
fn tiny_args(dir: &Path) -> Vec<String> {
    let mut args = vec!["--config".to_string(), toy_config().display().to_string()];
    for set in [
        format!("output_dir=\"{}\"", dir.join("out").display()),
        format!("g2p.cache_dir=\"{}\"", dir.join("cache").display()),
        "training.steps=20".into(),
        "training.checkpoint_interval=10".into(),
        "training.log_interval=5".into(),
        "model.model_dim=16".into(),
        "model.feedforward_dim=32".into(),
        "model.layers=1".into(),
        "decode.max_len=20".into(),
    ] {
        args.push("--set".into());
        args.push(set);
    }
    args
}

fn phonmt(sub: &str, args: &[String], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_phonmt"));
    cmd.arg(sub).args(args).env_remove("PHONMT_CACHE_DIR").env_remove("PHONMT_PHONEMIZER");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn manifest(dir: &Path) -> String {
    fs::read_to_string(dir.join("out/manifest.txt")).unwrap()
}

fn artifacts(manifest: &str) -> Vec<&str> {
    manifest.lines().filter(|l| l.starts_with("artifact.")).collect()
}

#[test]
fn every_subcommand_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let args = tiny_args(dir.path());
    let mut previous = 0;
    for sub in SUBCOMMANDS {
        let first = phonmt(sub, &args, &[]);
        assert!(first.status.success(), "{sub}: {}", stderr(&first));
        assert!(first.stdout.is_empty(), "data must not go to stdout");
        let m1 = manifest(dir.path());
        assert!(m1.contains(&format!("command={sub}\n")));
        assert!(!m1.contains("time"), "manifest must not carry timestamps");
        let count = artifacts(&m1).len();
        assert!(count > previous, "{sub} produced no new artifacts");
        previous = count;

        let second = phonmt(sub, &args, &[]);
        assert!(second.status.success());
        assert_eq!(manifest(dir.path()), m1, "{sub} changed something on rerun");
        assert!(stderr(&second).contains("up to date"), "{sub}: {}", stderr(&second));
    }
    let out = dir.path().join("out");
    for rel in [
        "phonemes/train.src",
        "data/phoneme/valid.tgt",
        "vocab/reference.src.vocab",
        "models/phoneme/model.bin",
        "models/reference/train.log",
        "translations/phoneme/test.hyp",
        "scores/test.kv",
        "compare/report.txt",
        "compare/report.kv",
    ] {
        assert!(out.join(rel).is_file(), "{rel} missing");
    }
    let report = fs::read_to_string(out.join("compare/report.txt")).unwrap();
    assert!(report.contains("Reference Model") && report.contains("Phoneme Model"));
    let hyps = fs::read_to_string(out.join("translations/reference/test.hyp")).unwrap();
    assert_eq!(hyps.lines().count(), 50);
}

#[test]
fn warm_cache_rerun_makes_no_backend_calls() {
    let dir = tempfile::tempdir().unwrap();
    let args = tiny_args(dir.path());
    assert!(phonmt("phonemize", &args, &[]).status.success());
    let before = fs::read(dir.path().join("out/phonemes/test.tgt")).unwrap();
    fs::remove_dir_all(dir.path().join("out")).unwrap();
    let again = phonmt("phonemize", &args, &[]);
    assert!(again.status.success());
    let log = stderr(&again);
    let lines: Vec<&str> = log.lines().filter(|l| l.contains("backend calls")).collect();
    assert_eq!(lines.len(), 6, "{log}");
    assert!(lines.iter().all(|l| l.contains(" 0 backend calls")), "{log}");
    assert_eq!(fs::read(dir.path().join("out/phonemes/test.tgt")).unwrap(), before);
}

#[test]
fn interrupted_training_resumes_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let args = tiny_args(dir.path());
    assert!(phonmt("train", &args, &[]).status.success());
    let model_dir = dir.path().join("out/models/reference");
    let finished = fs::read(model_dir.join("model.bin")).unwrap();

    // leave the run as if it had stopped after its first checkpoint
    fs::remove_file(model_dir.join("model.bin")).unwrap();
    fs::remove_file(model_dir.join("checkpoints/ckpt-00000020.bin")).unwrap();
    let stamp = dir.path().join("out/stamps/train.reference.stamp");
    let text = fs::read_to_string(&stamp).unwrap();
    fs::write(&stamp, text.replace("done=true\n", "")).unwrap();

    let resumed = phonmt("train", &args, &[]);
    assert!(resumed.status.success());
    assert!(stderr(&resumed).contains("resuming from"), "{}", stderr(&resumed));
    assert_eq!(fs::read(model_dir.join("model.bin")).unwrap(), finished);
}

#[test]
fn seed_flag_changes_the_models() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut args_b = tiny_args(b.path());
    args_b.extend(["--seed".to_string(), "77".into(), "--workers".into(), "2".into()]);
    assert!(phonmt("train", &tiny_args(a.path()), &[]).status.success());
    assert!(phonmt("train", &args_b, &[]).status.success());
    let m = |d: &Path| fs::read(d.join("out/models/phoneme/model.bin")).unwrap();
    assert_ne!(m(a.path()), m(b.path()));
    assert!(manifest(b.path()).contains("seed=77\n"));
    assert!(manifest(b.path()).contains("workers=2\n"));
}

#[test]
fn invalid_configuration_exits_nonzero_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = tiny_args(dir.path());
    args.extend([
        "--set".to_string(),
        "data.test_source=\"missing.en\"".into(),
        "--set".into(),
        "model.heads=0".into(),
    ]);
    let out = phonmt("compare", &args, &[]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("data.test_source") && err.contains("model"), "{err}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn phonemizer_command_from_environment() {
    let available = Command::new("sed").arg("--version").output().is_ok();
    if !available {
        eprintln!("sed unavailable; skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let mut args = tiny_args(dir.path());
    args.extend([
        "--set".to_string(),
        "g2p.en.backend=\"external\"".into(),
        "--set".into(),
        "g2p.en.protocol=\"line\"".into(),
        "--set".into(),
        "g2p.en.mode=\"permissive\"".into(),
    ]);
    let sed = "sed -u y/abcdefghijklmnopqrstuvwxyzT/ɑbkdɛfghɪjklmnɔpqrstʊvwxyzt/";
    // multibyte y/// needs a UTF-8 locale
    let out = phonmt("phonemize", &args, &[("PHONMT_PHONEMIZER", sed), ("LC_ALL", "C.UTF-8")]);
    assert!(out.status.success(), "{}", stderr(&out));
    let first = fs::read_to_string(dir.path().join("out/phonemes/train.src")).unwrap();
    assert!(first.starts_with("thɛ kɑr hɛɑrs ɑ hɔʊsɛ\n"), "{first}");
    let m = manifest(dir.path());
    assert!(m.contains("g2p.en.fingerprint="));
}
