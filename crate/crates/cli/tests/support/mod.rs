//! Helpers for driving the `lexcag` binary from tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

pub struct Output {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Runs the binary in `dir` with the given arguments.
pub fn lexcag<S: AsRef<str>>(dir: &Path, args: &[S]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_lexcag"))
        .current_dir(dir)
        .args(args.iter().map(|a| a.as_ref()))
        .output()
        .expect("binary runs");
    Output {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

/// Like [`lexcag`] but panics unless the run succeeds.
pub fn ok<S: AsRef<str>>(dir: &Path, args: &[S]) -> String {
    let out = lexcag(dir, args);
    assert_eq!(
        out.code,
        0,
        "lexcag {} failed:\n{}",
        args.iter().map(|a| a.as_ref()).collect::<Vec<_>>().join(" "),
        out.stderr
    );
    out.stdout
}

pub fn copy_fixture(dir: &Path, name: &str) {
    fs::copy(fixture(name), dir.join(name)).unwrap();
}

/// Every regular file in `dir`, by name.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

/// A small end-to-end workflow touching every subcommand. Returns the
/// concatenated standard output.
pub fn pipeline(dir: &Path, threads: usize) -> String {
    copy_fixture(dir, "samples.tsv");
    copy_fixture(dir, "gp.network.json");
    let t = threads.to_string();
    let steps: Vec<Vec<&str>> = vec![
        vec!["gen-nk", "--n", "3", "--k", "2", "--seed", "7", "--mutation-rate", "0.001", "--out", "nk"],
        vec!["ingest", "--samples", "samples.tsv", "--out", "ingested.network.json"],
        vec!["build", "--network", "nk.network.json", "--out", "nk.graph.json"],
        vec!["build", "--network", "ingested.network.json", "--self-loops", "keep", "--out", "ingested.graph.json"],
        vec!["build", "--network", "gp.network.json", "--mode", "bounded", "--budget", "40", "--out", "gp.graph.json"],
        vec!["analyze", "--graph", "nk.graph.json", "--optimum", "--out-dot", "nk.dot", "--out-report", "nk.report.json"],
        vec!["analyze", "--graph", "gp.graph.json", "--target", "3", "--damping", "0.9", "--out-dot", "gp.dot"],
        vec![
            "sim", "--landscape", "nk.landscape", "--graph", "nk.graph.json", "--replicates", "4", "--generations", "150",
            "--mutation-rate", "0.001,0.05", "--seed", "9", "--out", "sim.tsv",
        ],
        vec!["sim", "--landscape", "nk.landscape", "--replicates", "3", "--generations", "100", "--out", "raw.tsv"],
    ];
    let mut stdout = String::new();
    for step in steps {
        let mut args = vec!["--threads", t.as_str()];
        args.extend(step);
        stdout.push_str(&ok(dir, &args));
    }
    stdout
}
