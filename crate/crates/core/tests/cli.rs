use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn lidarloc(args: &[&str], extra: &[&Path]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lidarloc")).args(args).args(extra).output().unwrap()
}

fn digest(path: &Path) -> Vec<u8> {
    Sha256::digest(std::fs::read(path).unwrap()).to_vec()
}

#[test]
fn grid_and_pyramid_builds_are_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("seq");
    let out = lidarloc(&["gen-world", "--extent", "80", "--steps", "4", "--seed", "5", "--density", "6", "--out"], &[&seq]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let map = seq.join("map.bin");

    let mut hashes = Vec::new();
    for name in ["a", "b"] {
        let grid = dir.path().join(format!("{name}.grid"));
        let pyr = dir.path().join(format!("{name}.pyr"));
        assert!(lidarloc(&["build-grid", "--map"], &[&map, Path::new("--out"), &grid]).status.success());
        assert!(lidarloc(&["build-pyramid", "--map"], &[&map, Path::new("--out"), &pyr]).status.success());
        hashes.push((digest(&grid), digest(&pyr)));
    }
    assert_eq!(hashes[0], hashes[1]);
}

#[test]
fn missing_inputs_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.bin");
    let out = lidarloc(&["build-grid", "--map"], &[&missing, Path::new("--out"), &dir.path().join("g")]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let out = lidarloc(&["localize", "--seq"], &[&dir.path().join("no-seq")]);
    assert!(!out.status.success());
}

#[test]
fn malformed_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "n_particles = \"many\"\n").unwrap();
    let out = lidarloc(&["match-one", "--seq"], &[dir.path(), Path::new("--config"), &cfg]);
    assert!(!out.status.success());
}
