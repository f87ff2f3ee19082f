//! Output directory confinement and run manifests.

use std::path::{Component, Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const OUT_DIR_ENV: &str = "SDECOV_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "sdecov-out";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Serialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Every file a run writes goes through here, so nothing lands outside the
/// output directory and every output is hashed into the manifest.
pub struct OutDir {
    root: PathBuf,
    written: Vec<FileRecord>,
}

impl OutDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        let root = root.canonicalize().map_err(|e| CliError::io(root, e))?;
        Ok(Self {
            root,
            written: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Resolves `name` inside the directory. Relative names are joined to
    /// it; absolute names must already point inside it.
    pub fn resolve(&self, name: &Path) -> CliResult<PathBuf> {
        if name.components().any(|c| matches!(c, Component::ParentDir)) {
            return Err(CliError::OutsideOutDir(name.to_path_buf()));
        }
        let full = if name.is_absolute() {
            let parent = name.parent().ok_or_else(|| CliError::OutsideOutDir(name.to_path_buf()))?;
            let file = name.file_name().ok_or_else(|| CliError::OutsideOutDir(name.to_path_buf()))?;
            match parent.canonicalize() {
                Ok(p) => p.join(file),
                Err(_) => name.to_path_buf(),
            }
        } else {
            self.root.join(name)
        };
        if !full.starts_with(&self.root) || full == self.root {
            return Err(CliError::OutsideOutDir(name.to_path_buf()));
        }
        Ok(full)
    }

    pub fn write(&mut self, name: &Path, bytes: &[u8]) -> CliResult<PathBuf> {
        let full = self.resolve(name)?;
        if let Some(parent) = full.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        std::fs::write(&full, bytes).map_err(|e| CliError::io(&full, e))?;
        let rel = full.strip_prefix(&self.root).unwrap_or(&full).to_string_lossy().into_owned();
        self.written.push(FileRecord {
            path: rel,
            sha256: sha256_hex(bytes),
            bytes: bytes.len(),
        });
        Ok(full)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &Path, value: &T) -> CliResult<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::Usage(format!("serializing {}: {e}", name.display())))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn write_csv(&mut self, name: &Path, header: &[String], rows: &[Vec<String>]) -> CliResult<PathBuf> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| CliError::Usage(format!("writing {}: {e}", name.display()));
        w.write_record(header).map_err(err)?;
        for r in rows {
            w.write_record(r).map_err(err)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| CliError::Usage(format!("writing {}: {e}", name.display())))?;
        self.write(name, &bytes)
    }

    pub fn written(&self) -> &[FileRecord] {
        &self.written
    }
}

/// Sibling of `primary` with the extension replaced by `suffix`:
/// `fit.json` + `_trace.csv` gives `fit_trace.csv`.
pub fn sibling(primary: &Path, suffix: &str) -> PathBuf {
    let stem = primary.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    primary.with_file_name(format!("{stem}{suffix}"))
}

/// Provenance of one run; `runtime_secs` is the only field that varies
/// between identical reruns.
pub struct Manifest {
    pub subcommand: String,
    pub argv: Vec<String>,
    pub config: Option<(PathBuf, Vec<u8>)>,
    pub inputs: Vec<(PathBuf, Vec<u8>)>,
    pub seeds: Value,
    pub started: Instant,
    pub timings: Value,
}

impl Manifest {
    pub fn new(subcommand: &str, argv: Vec<String>) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            argv,
            config: None,
            inputs: Vec::new(),
            seeds: json!({}),
            started: Instant::now(),
            timings: json!({}),
        }
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds[name] = json!(value);
    }

    pub fn to_json(&self, out: &OutDir) -> Value {
        let config = self.config.as_ref().map(|(path, bytes)| {
            json!({
                "path": path.display().to_string(),
                "sha256": sha256_hex(bytes),
                "contents": serde_json::from_slice::<Value>(bytes).unwrap_or(Value::Null),
            })
        });
        let inputs: Vec<Value> = self
            .inputs
            .iter()
            .map(|(p, b)| json!({"path": p.display().to_string(), "sha256": sha256_hex(b), "bytes": b.len()}))
            .collect();
        json!({
            "tool": "sdecov",
            "subcommand": self.subcommand,
            "argv": self.argv,
            "config": config,
            "inputs": inputs,
            "seeds": self.seeds,
            "versions": {
                "sdecov": env!("CARGO_PKG_VERSION"),
                "manifest_format": 1,
            },
            "threads": rayon::current_num_threads(),
            "out_dir": out.root().display().to_string(),
            "outputs": out.written(),
            "runtime_secs": self.started.elapsed().as_secs_f64(),
            "timings": self.timings,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolve_confines_paths() {
        let dir = std::env::temp_dir().join(format!("sdecov-out-test-{}", std::process::id()));
        let out = OutDir::create(&dir).unwrap();
        assert!(out.resolve(Path::new("a/b.csv")).unwrap().starts_with(out.root()));
        assert!(out.resolve(Path::new("../x.csv")).is_err());
        assert!(out.resolve(Path::new("/etc/passwd")).is_err());
        assert!(out.resolve(&out.root().join("ok.json")).is_ok());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn sibling_names() {
        assert_eq!(sibling(Path::new("d/fit.json"), "_trace.csv"), PathBuf::from("d/fit_trace.csv"));
    }
}
