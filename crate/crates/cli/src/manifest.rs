//! Run manifests and atomic output writes.
//!
//! Every file a command produces is written through [`Run`], which renames a
//! finished temporary file into place and, once the command succeeds, drops a
//! `<output>.manifest.json` beside each output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Versions {
    pub aliascope: &'static str,
    pub model_format: u32,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command_line: Vec<String>,
    pub seed: u64,
    pub versions: Versions,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub wall_time_seconds: f64,
}

pub struct Run {
    started: Instant,
    argv: Vec<String>,
    seed: u64,
    inputs: Vec<FileHash>,
    outputs: Vec<PathBuf>,
}

impl Run {
    pub fn new(argv: Vec<String>, seed: u64) -> Self {
        Self {
            started: Instant::now(),
            argv,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// Records the hash of an input file or directory.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        let sha256 = hash_path(path).with_context(|| format!("hashing input {}", path.display()))?;
        self.inputs.push(FileHash {
            path: path.display().to_string(),
            sha256,
        });
        Ok(())
    }

    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        write_atomic(path, bytes)?;
        self.outputs.push(path.to_path_buf());
        Ok(())
    }

    /// Fills a fresh directory through `fill`, then moves it to `path`.
    /// An existing non-empty directory is never overwritten.
    pub fn write_dir(&mut self, path: &Path, fill: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
        if path.exists() {
            let empty = path.is_dir() && fs::read_dir(path)?.next().is_none();
            if !empty {
                bail!("refusing to overwrite existing {}", path.display());
            }
            fs::remove_dir(path)?;
        }
        let staging = tempfile::Builder::new().prefix(".aliascope-").tempdir_in(parent_dir(path))?;
        fill(staging.path())?;
        fs::rename(staging.path(), path).with_context(|| format!("moving output into {}", path.display()))?;
        // Already renamed away; nothing left to clean up.
        let _ = staging.keep();
        self.outputs.push(path.to_path_buf());
        Ok(())
    }

    /// Writes one manifest next to every output.
    pub fn finish(self) -> Result<()> {
        let outputs = self
            .outputs
            .iter()
            .map(|p| {
                Ok(FileHash {
                    path: p.display().to_string(),
                    sha256: hash_path(p)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest = RunManifest {
            command_line: self.argv,
            seed: self.seed,
            versions: Versions {
                aliascope: env!("CARGO_PKG_VERSION"),
                model_format: aliascope::nn::FORMAT_VERSION,
            },
            inputs: self.inputs,
            outputs,
            wall_time_seconds: self.started.elapsed().as_secs_f64(),
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        for p in &self.outputs {
            write_atomic(&manifest_path(p), text.as_bytes())?;
        }
        Ok(())
    }
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}

fn parent_dir(path: &Path) -> &Path {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = parent_dir(path);
    let mut tmp = tempfile::Builder::new()
        .prefix(".aliascope-")
        .tempfile_in(dir)
        .with_context(|| format!("creating temporary file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// SHA-256 of a file, or of a directory's sorted relative paths and contents.
pub fn hash_path(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    if path.is_dir() {
        let mut files = Vec::new();
        collect_files(path, path, &mut files)?;
        files.sort();
        for rel in files {
            let bytes = fs::read(path.join(&rel))?;
            h.update(rel.as_bytes());
            h.update([0]);
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(&bytes);
        }
    } else {
        h.update(fs::read(path)?);
    }
    Ok(format!("{:x}", h.finalize()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root)?.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            out.push(rel);
        }
    }
    Ok(())
}
