#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bcpnet::io::save_image;
use bcpnet::oracle::low_light_pair;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bcpnet"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn write_pair(dir: &Path, w: usize, h: usize, seed: u64) -> (PathBuf, PathBuf) {
    let (vis, th) = low_light_pair(w, h, seed);
    let v = dir.join("visible.png");
    let t = dir.join("thermal.png");
    save_image(&vis, &v).unwrap();
    save_image(&th, &t).unwrap();
    (v, t)
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn read_json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}
