use std::path::Path;
use std::process::{Command, Output};

fn vprom(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vprom"))
        .args(args)
        .env("VPROM_ARTIFACTS", root)
        .output()
        .expect("binary runs")
}

fn ok(root: &Path, args: &[&str]) -> String {
    let out = vprom(root, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn tiny_campaign_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    assert!(ok(root, &["--preset", "tiny", "doe"]).contains("6 train, 3 valid"));
    assert!(ok(root, &["doe"]).contains("unchanged"));
    ok(root, &["simulate", "--split", "train", "--workers", "2"]);
    ok(root, &["simulate", "--split", "valid"]);
    assert!(ok(root, &["simulate", "--split", "valid"]).contains("0 run, 3 already done"));
    for s in ["mac", "cprom", "vprom"] {
        ok(root, &["build", "--strategy", s]);
    }
    assert!(ok(root, &["evaluate", "--strategy", "cprom"]).contains("CpROM on valid: 3 samples"));
    assert!(ok(root, &["evaluate", "--strategy", "vprom", "--hyper", "--tau", "0.02"]).contains("HP-VpROM"));
    assert!(ok(root, &["evaluate", "--strategy", "vprom", "--uq", "3"]).contains("envelope sample"));
    assert!(ok(root, &["evaluate", "--strategy", "local", "--split", "train"]).contains("6 samples"));
    let table = ok(root, &["report"]);
    assert!(table.starts_with("strategy\t"));
    assert!(table.contains("VpROM/valid"));
    assert!(root.join("report/error_map.tsv").exists());
    assert!(root.join("manifest.json").exists());
}

#[test]
fn usage_and_configuration_errors() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();

    let out = vprom(root, &["--preset", "tiny", "evaluate", "--strategy", "mac", "--uq", "40"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--uq"));

    let out = vprom(root, &["report"]);
    assert!(!out.status.success());

    let out = vprom(root, &["evaluate", "--strategy", "nope"]);
    assert_eq!(out.status.code(), Some(2));

    // A malformed file names the offending key.
    let cfg = root.join("bad.toml");
    let text = std::fs::read_to_string(root.join("config.toml")).unwrap().replacen("lower = ", "lowr = ", 1);
    std::fs::write(&cfg, text).unwrap();
    let other = tempfile::tempdir().unwrap();
    let out = vprom(other.path(), &["--config", cfg.to_str().unwrap(), "doe"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lower"));

    // The workspace refuses a different configuration.
    let out = vprom(root, &["--seed", "99", "doe"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("different configuration"));
}
