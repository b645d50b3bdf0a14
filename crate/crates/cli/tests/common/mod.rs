#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_wtopics");

pub fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("WTOPICS_THREADS")
        .output()
        .expect("spawn wtopics")
}

pub fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "wtopics {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Relative path to file bytes for every file below `root`.
pub fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, acc: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(base, &p, acc);
            } else {
                let rel = p.strip_prefix(base).unwrap().display().to_string();
                acc.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    let mut acc = BTreeMap::new();
    walk(root, root, &mut acc);
    acc
}

/// First differing file between two output trees, if any.
pub fn first_difference(a: &Path, b: &Path) -> Option<String> {
    let (sa, sb) = (snapshot(a), snapshot(b));
    if sa.keys().ne(sb.keys()) {
        return Some(format!("file sets differ: {:?} vs {:?}", sa.keys(), sb.keys()));
    }
    sa.iter()
        .find(|(k, v)| sb[*k] != **v)
        .map(|(k, _)| k.clone())
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}
