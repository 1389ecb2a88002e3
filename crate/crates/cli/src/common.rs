//! Directory scanning, stem pairing, hashing and manifests.

use std::collections::btree_map::Entry as Slot;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const TOOL: &str = "nhk";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Files in `dir` whose extension is one of `exts`, keyed by stem.
/// A stem present under two extensions is reported as a duplicate.
pub fn scan(dir: &Path, exts: &[&str]) -> Result<(BTreeMap<String, PathBuf>, Vec<FileError>)> {
    let mut found = BTreeMap::new();
    let mut errors = Vec::new();
    let entries = std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))?;
    let mut paths: Vec<PathBuf> = entries
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()
        .with_context(|| format!("reading {}", dir.display()))?;
    paths.sort();
    for path in paths {
        if !path.is_file() {
            continue;
        }
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if !exts.iter().any(|x| x.eq_ignore_ascii_case(ext)) {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()).map(str::to_owned) else {
            continue;
        };
        match found.entry(stem) {
            Slot::Occupied(e) => errors.push(FileError::new(e.key(), format!("duplicate input in {}", dir.display()))),
            Slot::Vacant(e) => {
                e.insert(path);
            }
        }
    }
    Ok((found, errors))
}

/// Stems present in every directory, in sorted order. Stems missing a
/// counterpart come back as named errors.
pub fn pair(sets: &[(&str, &BTreeMap<String, PathBuf>)]) -> (Vec<(String, Vec<PathBuf>)>, Vec<FileError>) {
    let mut all: Vec<&String> = sets.iter().flat_map(|(_, s)| s.keys()).collect();
    all.sort();
    all.dedup();
    let mut paired = Vec::new();
    let mut errors = Vec::new();
    for stem in all {
        let missing: Vec<&str> = sets
            .iter()
            .filter(|(_, s)| !s.contains_key(stem))
            .map(|(role, _)| *role)
            .collect();
        if missing.is_empty() {
            paired.push((stem.clone(), sets.iter().map(|(_, s)| s[stem].clone()).collect()));
        } else {
            errors.push(FileError::new(stem, format!("missing {} file", missing.join(", "))));
        }
    }
    (paired, errors)
}

/// Run `f` over `items` on a pool of `threads` workers (all cores when
/// unset); results come back in input order.
pub fn run_parallel<I: Sync, T: Send>(
    threads: Option<usize>,
    items: &[I],
    f: impl Fn(usize, &I) -> T + Sync,
) -> Result<Vec<T>> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().context("building thread pool")?;
    Ok(pool.install(|| items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect()))
}

#[derive(Debug, Clone, Serialize)]
pub struct Hashed {
    pub file: String,
    pub sha256: String,
}

impl Hashed {
    pub fn of(path: &Path, bytes: &[u8]) -> Self {
        Self {
            file: file_name(path),
            sha256: sha256_hex(bytes),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FileError {
    pub stem: String,
    pub error: String,
}

impl FileError {
    pub fn new(stem: &str, error: impl Into<String>) -> Self {
        Self {
            stem: stem.to_owned(),
            error: error.into(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Entry {
    pub stem: String,
    pub inputs: Vec<Hashed>,
    pub outputs: Vec<Hashed>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub details: Option<serde_json::Value>,
}

/// Reproducibility record written next to every command's outputs.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub parameters: serde_json::Value,
    pub entries: Vec<Entry>,
    pub errors: Vec<FileError>,
}

impl Manifest {
    pub fn new(command: &'static str, parameters: serde_json::Value) -> Self {
        Self {
            tool: TOOL,
            version: VERSION,
            command,
            parameters,
            entries: Vec::new(),
            errors: Vec::new(),
        }
    }

    /// Fold per-stem results in order.
    pub fn absorb(&mut self, results: Vec<(String, Result<Entry>)>) {
        for (stem, result) in results {
            match result {
                Ok(entry) => self.entries.push(entry),
                Err(e) => self.errors.push(FileError::new(&stem, format!("{e:#}"))),
            }
        }
        self.errors.sort_by(|a, b| a.stem.cmp(&b.stem));
    }

    pub fn report_errors(&self) {
        for e in &self.errors {
            eprintln!("error: {}: {}", e.stem, e.error);
        }
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, &bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(bytes)
}

/// Write `bytes` and return their hash record.
pub fn write_output(path: &Path, bytes: &[u8]) -> Result<Hashed> {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(Hashed::of(path, bytes))
}

pub fn read_input(path: &Path) -> Result<(Vec<u8>, Hashed)> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let hashed = Hashed::of(path, &bytes);
    Ok((bytes, hashed))
}

pub fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn pairing_names_missing_roles() {
        let a: BTreeMap<String, PathBuf> = [
            ("x".to_string(), PathBuf::from("a/x")),
            ("y".to_string(), PathBuf::from("a/y")),
        ]
        .into();
        let b: BTreeMap<String, PathBuf> = [("x".to_string(), PathBuf::from("b/x"))].into();
        let (paired, errors) = pair(&[("fg", &a), ("hover", &b)]);
        assert_eq!(paired.len(), 1);
        assert_eq!(paired[0].0, "x");
        assert_eq!(errors.len(), 1);
        assert_eq!(errors[0].stem, "y");
        assert!(errors[0].error.contains("hover"));
    }

    #[test]
    fn parallel_results_keep_order() {
        let items: Vec<usize> = (0..100).collect();
        let out = run_parallel(Some(4), &items, |i, x| i * 1000 + x).unwrap();
        assert_eq!(out, (0..100).map(|i| i * 1001).collect::<Vec<_>>());
        assert!(run_parallel(Some(0), &items, |_, x| *x).is_err());
    }
}
