use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

/// Output files of one command, held in memory until every computation has
/// succeeded, then written atomically.
pub struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
}

#[derive(Debug, Serialize)]
struct OutputEntry<'a> {
    file: &'a str,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    versions: BTreeMap<&'static str, &'static str>,
    command: &'a str,
    root_seed: u64,
    derived_seeds: &'a BTreeMap<&'static str, u64>,
    config_sha256: String,
    outputs: Vec<OutputEntry<'a>>,
    config: &'a RunConfig,
}

impl Artifacts {
    pub fn new() -> Self {
        Self { files: Vec::new() }
    }

    pub fn bytes(&mut self, name: &str, data: Vec<u8>) {
        self.files.push((name.to_string(), data));
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut data = serde_json::to_vec_pretty(value)?;
        data.push(b'\n');
        self.bytes(name, data);
        Ok(())
    }

    /// Collects whatever `write` produces into `name`.
    pub fn with<F>(&mut self, name: &str, write: F) -> Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> privshare_core::Result<()>,
    {
        let mut data = Vec::new();
        write(&mut data)?;
        self.bytes(name, data);
        Ok(())
    }

    /// Writes every file and then `manifest.json`, each through a temporary
    /// file renamed into place. Returns the written paths.
    pub fn commit(
        mut self,
        dir: &Path,
        command: &str,
        config: &RunConfig,
        derived_seeds: &BTreeMap<&'static str, u64>,
    ) -> Result<Vec<PathBuf>> {
        let manifest = Manifest {
            tool: "privshare",
            versions: BTreeMap::from([
                ("privshare-cli", env!("CARGO_PKG_VERSION")),
                ("privshare-core", privshare_core::VERSION),
            ]),
            command,
            root_seed: config.seed,
            derived_seeds,
            config_sha256: config.hash(),
            outputs: self
                .files
                .iter()
                .map(|(name, data)| OutputEntry {
                    file: name,
                    sha256: hex::encode(Sha256::digest(data)),
                })
                .collect(),
            config,
        };
        let mut manifest_bytes = serde_json::to_vec_pretty(&manifest)?;
        manifest_bytes.push(b'\n');
        self.files.push(("manifest.json".to_string(), manifest_bytes));

        fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        let mut written = Vec::with_capacity(self.files.len());
        for (name, data) in &self.files {
            let target = dir.join(name);
            let mut tmp = tempfile::NamedTempFile::new_in(dir)
                .with_context(|| format!("creating a temporary file in {}", dir.display()))?;
            tmp.write_all(data)?;
            tmp.flush()?;
            tmp.persist(&target)
                .with_context(|| format!("writing {}", target.display()))?;
            written.push(target);
        }
        Ok(written)
    }
}
