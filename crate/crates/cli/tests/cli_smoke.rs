//! The binary itself: flag plumbing, config loading and the exit-code
//! contract (0 fine, 2 bad config, 3 stage failure, 4 artifact mismatch).

use std::process::Command;

use mumo_cli::config::Config;

fn mumo() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mumo"))
}

#[test]
fn print_config_dumps_the_effective_defaults_as_toml() {
    let out = mumo().arg("print-config").output().unwrap();
    assert!(out.status.success());
    let parsed: Config = toml::from_str(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(parsed, Config::default());
}

#[test]
fn master_seed_flag_fans_out_before_printing() {
    let out = mumo().args(["print-config", "--seed", "40"]).output().unwrap();
    let parsed: Config = toml::from_str(&String::from_utf8(out.stdout).unwrap()).unwrap();
    let mut expect = Config::default();
    expect.override_seed(40);
    assert_eq!(parsed, expect);
    assert_eq!(parsed.synth.seed, 41);
    assert_eq!(parsed.decode.seed, 46);
}

#[test]
fn a_config_file_overrides_defaults_and_a_broken_one_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.toml");
    std::fs::write(&good, "[tokenizer]\nmerges = 33\n").unwrap();
    let out = mumo()
        .args(["print-config", "--config"])
        .arg(&good)
        .output()
        .unwrap();
    assert!(out.status.success());
    let parsed: Config = toml::from_str(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(parsed.tokenizer.merges, 33);

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[tokenizer]\nmerges = \"many\"\n").unwrap();
    let out = mumo().args(["print-config", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr).into_owned();
    assert!(msg.contains("bad.toml"), "{msg}");
}

#[test]
fn unknown_config_keys_exit_2_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("typo.toml");
    std::fs::write(&f, "[tokenizer]\nmergse = 10\n").unwrap();
    let out = mumo().args(["print-config", "--config"]).arg(&f).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mergse"));
}

#[test]
fn generating_without_artifacts_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = mumo()
        .args(["generate", "--prompt", "hello", "--out-dir"])
        .arg(dir.path().join("nothing_here"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn unknown_generate_mode_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = mumo()
        .args(["generate", "--prompt", "hello", "--mode", "turbo", "--out-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
