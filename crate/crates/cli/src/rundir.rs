//! Run directories named by the digest of everything that determines their
//! contents, filled in a scratch directory and renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seeds: Vec<u64>,
    /// Digest of the canonical JSON of every resolved config and flag.
    pub config_digest: String,
    pub config: Value,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_file(path: &Path) -> Result<InputDigest> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

pub struct RunDir {
    manifest: RunManifest,
    name: String,
    root: PathBuf,
    tmp: PathBuf,
}

impl RunDir {
    /// Creates the scratch directory for a run. The name depends on the
    /// command, seeds, config and input bytes, never on worker count.
    pub fn create(out: &Path, command: &str, seeds: Vec<u64>, config: Value, inputs: &[PathBuf]) -> Result<Self> {
        let inputs = inputs.iter().map(|p| digest_file(p)).collect::<Result<Vec<_>>>()?;
        let config_digest = sha256_hex(serde_json::to_string(&config)?.as_bytes());
        let manifest = RunManifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seeds,
            config_digest,
            config,
            inputs,
            outputs: Vec::new(),
        };
        let digest = sha256_hex(serde_json::to_string(&manifest)?.as_bytes());
        let name = format!("{command}-{}", &digest[..16]);
        fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
        let tmp = out.join(format!(".{name}.partial"));
        if tmp.exists() {
            fs::remove_dir_all(&tmp).with_context(|| format!("cannot clear {}", tmp.display()))?;
        }
        fs::create_dir(&tmp).with_context(|| format!("cannot create {}", tmp.display()))?;
        Ok(Self {
            manifest,
            name,
            root: out.to_path_buf(),
            tmp,
        })
    }

    /// Path for a new output file inside the run.
    pub fn file(&mut self, name: &str) -> PathBuf {
        self.manifest.outputs.push(name.to_string());
        self.tmp.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.file(name);
        let mut f = fs::File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
        f.write_all(bytes)
            .with_context(|| format!("cannot write {}", path.display()))
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Writes the manifest and moves the run into its final place,
    /// replacing an earlier run with the same name.
    pub fn finish(mut self) -> Result<PathBuf> {
        self.manifest.outputs.sort();
        let manifest = serde_json::to_string_pretty(&self.manifest)? + "\n";
        fs::write(self.tmp.join("manifest.json"), manifest).context("cannot write manifest")?;
        let dest = self.root.join(&self.name);
        if dest.exists() {
            fs::remove_dir_all(&dest).with_context(|| format!("cannot replace {}", dest.display()))?;
        }
        fs::rename(&self.tmp, &dest).with_context(|| format!("cannot move run into {}", dest.display()))?;
        Ok(dest)
    }
}
