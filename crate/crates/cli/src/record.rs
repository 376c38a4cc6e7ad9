//! The `run.json` record written by every subcommand, and content hashes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const RUN_FILE: &str = "run.json";

/// Version string baked in at build time.
pub fn version() -> &'static str {
    env!("DDA_VERSION")
}

/// Where a seed came from, so sweeps can tell overrides apart.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SeedSource {
    Default,
    Config,
    Flag,
    Env,
}

#[derive(Debug, Serialize)]
pub struct RunRecord {
    pub command: String,
    pub version: String,
    pub argv: Vec<String>,
    pub config: Value,
    pub seeds: BTreeMap<String, u64>,
    pub seed_source: SeedSource,
    /// Path as given on the command line to SHA-256 of its content.
    pub inputs: BTreeMap<String, String>,
}

impl RunRecord {
    pub fn new(command: &str, argv: &[String]) -> Self {
        RunRecord {
            command: command.into(),
            version: version().into(),
            argv: argv.to_vec(),
            config: Value::Null,
            seeds: BTreeMap::new(),
            seed_source: SeedSource::Default,
            inputs: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<String> {
        let h = hash_path(path)?;
        self.inputs.insert(path.display().to_string(), h.clone());
        Ok(h)
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(RUN_FILE);
        write_json(&path, self)?;
        Ok(path)
    }
}

pub fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// SHA-256 of a file, or of a directory tree: every file's relative path and
/// content in sorted order. Run records are skipped so a directory hashes the
/// same before and after a run writes into it.
pub fn hash_path(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    if path.is_dir() {
        let mut files = Vec::new();
        collect(path, &mut files)?;
        files.sort();
        for f in files {
            let rel = f.strip_prefix(path).unwrap_or(&f);
            if rel == Path::new(RUN_FILE) {
                continue;
            }
            h.update(rel.to_string_lossy().as_bytes());
            h.update([0]);
            h.update(fs::read(&f).with_context(|| format!("reading {}", f.display()))?);
        }
    } else {
        h.update(fs::read(path).with_context(|| format!("reading {}", path.display()))?);
    }
    Ok(hex(&h.finalize()))
}

fn collect(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for e in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let p = e?.path();
        if p.is_dir() {
            collect(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Deep-merges `patch` into `base`: objects merge key by key, anything else
/// replaces.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn merge_is_deep() {
        let mut a = json!({"x": 1, "m": {"a": 1, "b": 2}});
        merge(&mut a, json!({"m": {"b": 3}, "y": [1]}));
        assert_eq!(a, json!({"x": 1, "m": {"a": 1, "b": 3}, "y": [1]}));
    }

    #[test]
    fn directory_hash_ignores_run_records() {
        let d = tempfile::tempdir().unwrap();
        fs::write(d.path().join("a.txt"), "hello").unwrap();
        let before = hash_path(d.path()).unwrap();
        fs::write(d.path().join(RUN_FILE), "{}").unwrap();
        assert_eq!(hash_path(d.path()).unwrap(), before);
        fs::write(d.path().join("b.txt"), "").unwrap();
        assert_ne!(hash_path(d.path()).unwrap(), before);
        // known digest of "hello"
        assert_eq!(
            hash_path(&d.path().join("a.txt")).unwrap(),
            "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"
        );
    }
}
