//! Deterministic artifact bundle: every command writes its outputs through
//! this sink, which records content hashes into a top-level MANIFEST.json.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Serialize)]
struct ArtifactEntry {
    path: String,
    sha256: String,
    bytes: usize,
}

#[derive(Serialize)]
struct Manifest<'a> {
    schema_version: u64,
    command: &'a str,
    artifacts: Vec<ArtifactEntry>,
}

pub struct OutputSink {
    dir: PathBuf,
    entries: Vec<ArtifactEntry>,
}

impl OutputSink {
    pub fn new(dir: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(OutputSink {
            dir: dir.to_path_buf(),
            entries: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, content: &str) -> anyhow::Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, content)?;
        let mut hasher = Sha256::new();
        hasher.update(content.as_bytes());
        self.entries.push(ArtifactEntry {
            path: name.to_string(),
            sha256: hex::encode(hasher.finalize()),
            bytes: content.len(),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, &text)
    }

    pub fn finish(mut self, command: &str) -> anyhow::Result<()> {
        self.entries.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = Manifest {
            schema_version: crate::config::SCHEMA_VERSION,
            command,
            artifacts: self.entries,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(self.dir.join("MANIFEST.json"), text)?;
        Ok(())
    }
}
