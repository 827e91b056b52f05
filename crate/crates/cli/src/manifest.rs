use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::hex;
use crate::error::CliError;

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Artifact {
    /// Relative to the output directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Stage {
    pub name: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct DataFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub artifacts: Vec<Artifact>,
    pub stages: Vec<Stage>,
    pub data_files: Vec<DataFile>,
}

pub const MANIFEST: &str = "manifest.json";

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

/// Output directory of one command. Every file goes through [`Run::write`]
/// so the manifest lists it.
pub struct Run {
    dir: PathBuf,
    manifest: RunManifest,
}

impl Run {
    pub fn create(dir: &Path, command: &str, config_hash: String, seed: Option<u64>) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest: RunManifest {
                command: command.to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                config_hash,
                seed,
                artifacts: Vec::new(),
                stages: Vec::new(),
                data_files: Vec::new(),
            },
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, contents: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        std::fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
        self.record(name, contents);
        Ok(path)
    }

    /// Lists a file that something else already wrote into the directory.
    pub fn adopt(&mut self, path: &Path) -> Result<(), CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        let rel = path.strip_prefix(&self.dir).unwrap_or(path);
        self.record(&rel.to_string_lossy(), &bytes);
        Ok(())
    }

    fn record(&mut self, name: &str, contents: &[u8]) {
        let entry = Artifact {
            path: name.to_string(),
            bytes: contents.len() as u64,
            sha256: hex(&Sha256::digest(contents)),
        };
        match self.manifest.artifacts.iter_mut().find(|a| a.path == entry.path) {
            Some(existing) => *existing = entry,
            None => self.manifest.artifacts.push(entry),
        }
    }

    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.manifest.stages.push(Stage {
            name: name.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        out
    }

    pub fn data_files(&mut self, files: &[PathBuf]) -> Result<(), CliError> {
        for f in files {
            self.manifest.data_files.push(DataFile {
                path: f.display().to_string(),
                sha256: sha256_file(f)?,
            });
        }
        Ok(())
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn finish(self) -> Result<RunManifest, CliError> {
        let path = self.dir.join(MANIFEST);
        let json = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        std::fs::write(&path, json + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(self.manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_written_file_is_listed_once() {
        let dir = tempfile::tempdir().unwrap();
        let mut run = Run::create(dir.path(), "t", "h".into(), Some(1)).unwrap();
        run.write("a.csv", b"x\n").unwrap();
        run.write("sub/b.csv", b"y\n").unwrap();
        run.write("a.csv", b"z\n").unwrap();
        let m = run.finish().unwrap();
        let paths: Vec<_> = m.artifacts.iter().map(|a| a.path.as_str()).collect();
        assert_eq!(paths, ["a.csv", "sub/b.csv"]);
        assert_eq!(m.artifacts[0].sha256, hex(&Sha256::digest(b"z\n")));
        assert!(dir.path().join(MANIFEST).exists());
    }
}
