#![allow(dead_code)]

use std::path::{Path, PathBuf};

pub mod gen;

use anonpsy::cli::Config;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

pub fn corpus() -> PathBuf {
    fixtures().join("corpus")
}

pub fn golden(case_id: &str, file: &str) -> PathBuf {
    fixtures().join("golden").join(case_id).join(file)
}

pub fn config() -> Config {
    Config::load(&fixtures().join("config.yaml")).expect("fixture config loads")
}

pub const CASES: [&str; 3] = ["case_01", "case_02", "case_03"];

/// Every file under `dir` with its contents, keyed by relative path.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out
}
