//! Shared fixtures for binary-level tests: a small two-room world, helpers
//! to run the compiled CLI, and output parsers.

#![allow(dead_code)]

use std::ffi::OsStr;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use semloft::world::{save_world, Door, SemanticWorld, Unit, WorldParams};

pub const TWO_ROOM_DIMS: (usize, usize) = (52, 24);
pub const TWO_ROOM_RESOLUTION: f64 = 0.05;

/// Two same-size rooms side by side sharing a wall with one door.
pub fn two_room_world() -> SemanticWorld {
    let units =
        vec![Unit::new(2, 2, 26, 20).unwrap(), Unit::new(26, 2, 50, 20).unwrap()];
    let doors = vec![Door::new(0, 1, [[26, 8], [26, 12]]).unwrap()];
    let (world, dropped) = SemanticWorld::assemble(units, doors, &WorldParams::default());
    assert!(dropped.is_empty(), "fixture door must survive assembly");
    world
}

/// Writes the fixture world JSON into `dir` and returns the path.
pub fn write_truth(dir: &Path) -> PathBuf {
    let path = dir.join("truth.json");
    save_world(&two_room_world(), TWO_ROOM_DIMS, TWO_ROOM_RESOLUTION, &path).unwrap();
    path
}

/// Runs the compiled binary with `args` and a scrubbed environment.
pub fn semloft<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<OsStr>,
{
    Command::new(env!("CARGO_BIN_EXE_semloft"))
        .env_remove("SEMLOFT_CONFIG")
        .args(args)
        .output()
        .expect("binary runs")
}

/// Same, with one environment variable set.
pub fn semloft_env<I, S>(args: I, key: &str, value: &Path) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<OsStr>,
{
    Command::new(env!("CARGO_BIN_EXE_semloft"))
        .env_remove("SEMLOFT_CONFIG")
        .env(key, value)
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("process not killed by signal")
}

/// Parses the `kind` field of the single-line error JSON on stderr.
pub fn stderr_error_kind(out: &Output) -> String {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.trim();
    let v: serde_json::Value = serde_json::from_str(line)
        .unwrap_or_else(|_| panic!("stderr is not error JSON: {line:?}"));
    v["kind"].as_str().expect("error JSON has a kind").to_string()
}

pub fn read_json(path: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("read {}: {e}", path.display()));
    serde_json::from_str(&text).unwrap_or_else(|e| panic!("parse {}: {e}", path.display()))
}

/// Synthesizes a noise-free map from the fixture truth; returns (map, truth).
pub fn synth_clean(dir: &Path) -> (PathBuf, PathBuf) {
    let truth = write_truth(dir);
    let map = dir.join("map.pgm");
    let out = semloft([
        OsStr::new("synth"),
        OsStr::new("--world"),
        truth.as_os_str(),
        OsStr::new("--out"),
        map.as_os_str(),
    ]);
    assert_eq!(exit_code(&out), 0, "synth failed: {}", String::from_utf8_lossy(&out.stderr));
    (map, truth)
}
