use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{Map, Value};

#[derive(Serialize)]
struct Entry {
    path: String,
    kind: String,
    seed: Option<u64>,
}

/// `manifest.json` in the output directory, naming every file written.
pub struct Manifest {
    dir: PathBuf,
    command: String,
    seed: Option<u64>,
    files: Vec<Entry>,
    extra: Map<String, Value>,
}

impl Manifest {
    pub fn new(dir: &Path, command: &str, seed: Option<u64>) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), command: command.into(), seed, files: Vec::new(), extra: Map::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn add(&mut self, name: &str, kind: &str, seed: Option<u64>) {
        self.files.push(Entry { path: name.into(), kind: kind.into(), seed });
    }

    pub fn extra(&mut self, key: &str, value: Value) {
        self.extra.insert(key.into(), value);
    }

    pub fn finish(self) -> Result<()> {
        let doc = serde_json::json!({
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "seed": self.seed,
            "files": self.files,
            "extra": self.extra,
        });
        let path = self.dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&doc)? + "\n").with_context(|| format!("writing {}", path.display()))
    }
}
