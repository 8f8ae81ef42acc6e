#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn sinoma(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sinoma")).args(args).output().expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// Writes a sine recipe into `dir` and generates `<name>.csv` from it.
pub fn sine_file(dir: &Path, name: &str, s2_epsilon: f64, s2_delta: f64, seed: u64) -> PathBuf {
    let recipe = dir.join(format!("{name}.toml"));
    std::fs::write(
        &recipe,
        format!("signal = \"sine\"\nn = 128\nslope = 2.1\ns2_epsilon = {s2_epsilon}\ns2_delta = {s2_delta}\nseed = {seed}\n"),
    )
    .unwrap();
    let csv = dir.join(format!("{name}.csv"));
    let out = sinoma(&["generate", path_str(&recipe), path_str(&csv)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    csv
}

pub fn write_csv(path: &Path, x: &[f64], y: &[f64]) {
    let mut text = String::from("index,x,y\n");
    for (i, (a, b)) in x.iter().zip(y).enumerate() {
        text.push_str(&format!("{},{a},{b}\n", i + 1));
    }
    std::fs::write(path, text).unwrap();
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Rows of a headed numeric CSV, keyed by column name.
pub fn read_table(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(|v| v.parse().unwrap_or(f64::NAN)).collect()).collect();
    (header, rows)
}

pub fn column(table: &(Vec<String>, Vec<Vec<f64>>), name: &str) -> Vec<f64> {
    let i = table.0.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    table.1.iter().map(|r| r[i]).collect()
}

pub fn estimate(report: &serde_json::Value, method: &str) -> f64 {
    report["estimates"]
        .as_array()
        .unwrap()
        .iter()
        .find(|e| e["method"] == method)
        .unwrap_or_else(|| panic!("no {method} estimate"))["slope"]
        .as_f64()
        .unwrap()
}
