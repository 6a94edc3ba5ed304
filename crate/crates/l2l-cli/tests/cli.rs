//! CLI contract tests: exit codes, file counts, env-var overrides. Kept
//! cheap (tiny images, no training) — the full pipeline is exercised by the
//! acceptance suite.

use std::path::Path;
use std::process::{Command, Output};

fn l2l(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_l2l"));
    cmd.args(args).env_clear();
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn l2l")
}

fn count_files(dir: &Path, suffix: &str) -> usize {
    std::fs::read_dir(dir)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .file_name()
                .to_string_lossy()
                .ends_with(suffix)
        })
        .count()
}

#[test]
fn no_arguments_is_usage_error() {
    let out = l2l(&[], &[]);
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("Usage") || msg.contains("usage"), "{msg}");
}

#[test]
fn unknown_subcommand_is_usage_error() {
    assert_eq!(l2l(&["frobnicate"], &[]).status.code(), Some(2));
}

#[test]
fn help_and_version_succeed() {
    assert_eq!(l2l(&["--help"], &[]).status.code(), Some(0));
    assert_eq!(l2l(&["--version"], &[]).status.code(), Some(0));
}

#[test]
fn bad_config_key_is_config_error_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[vae]\nbetaa = 1\n").unwrap();
    let out = l2l(
        &["--config", cfg.to_str().unwrap(), "toydata", "--out", "x", "--n", "1"],
        &[],
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("betaa"));
}

#[test]
fn missing_input_is_runtime_error() {
    let out = l2l(&["refine", "--input", "/no/such.png", "--out", "/tmp/x.png"], &[]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn toydata_writes_paired_files_and_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("data");
    let out = l2l(
        &["--seed", "7", "toydata", "--out", out_dir.to_str().unwrap(), "--n", "64", "--size", "32"],
        &[],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(count_files(&out_dir, "_skel.png"), 64);
    assert_eq!(count_files(&out_dir, "_target.png"), 64);
    assert!(out_dir.join("dataset.json").is_file());
    assert!(out_dir.join("run_manifest.json").is_file());
}

#[test]
fn seed_env_var_changes_outputs_and_flag_wins() {
    let dir = tempfile::tempdir().unwrap();
    let gen = |name: &str, envs: &[(&str, &str)], extra: &[&str]| {
        let out_dir = dir.path().join(name);
        let mut args = vec!["toydata", "--out"];
        let path = out_dir.to_str().unwrap().to_string();
        args.push(&path);
        args.extend(["--n", "2", "--size", "32"]);
        args.extend_from_slice(extra);
        let out = l2l(&args, envs);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(out_dir.join("toy_0000_skel.png")).unwrap()
    };
    let base = gen("a", &[], &[]);
    let env_seeded = gen("b", &[("L2L_SEED", "99")], &[]);
    let flag_over_env = gen("c", &[("L2L_SEED", "99")], &["--seed", "0"]);
    assert_ne!(base, env_seeded, "env seed must change the dataset");
    assert_eq!(base, flag_over_env, "--seed must outrank L2L_SEED (root default 0)");
}

#[test]
fn json_logs_are_line_delimited_objects() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("data");
    let out = l2l(
        &["--json-logs", "toydata", "--out", out_dir.to_str().unwrap(), "--n", "1", "--size", "32"],
        &[],
    );
    assert!(out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    for line in stderr.lines() {
        let v: serde_json::Value = serde_json::from_str(line).expect("each log line is JSON");
        assert!(v.get("event").is_some() && v.get("wall_time").is_some(), "{line}");
    }
}
