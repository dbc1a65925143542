//! Writing run artifacts and recording their content hashes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::PipelineError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes files into one directory and remembers each file's SHA-256.
#[derive(Debug)]
pub struct ArtifactWriter {
    dir: PathBuf,
    hashes: BTreeMap<String, String>,
}

impl ArtifactWriter {
    pub fn new(dir: &Path) -> Result<Self, PipelineError> {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            hashes: BTreeMap::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<(), PipelineError> {
        let path = self.path(name);
        std::fs::write(&path, bytes).map_err(|e| PipelineError::io(&path, e))?;
        self.hashes.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// Builds a CSV in memory with `f` and writes it.
    pub fn write_csv<F>(&mut self, name: &str, stage: &'static str, f: F) -> Result<(), PipelineError>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<(), csv::Error>,
    {
        let mut buf = Vec::new();
        f(&mut buf).map_err(|e| PipelineError::stage(stage, e))?;
        self.write_bytes(name, &buf)
    }

    /// Writes rows of string cells under `header`.
    pub fn write_rows(
        &mut self,
        name: &str,
        stage: &'static str,
        header: &[&str],
        rows: impl IntoIterator<Item = Vec<String>>,
    ) -> Result<(), PipelineError> {
        self.write_csv(name, stage, |buf| {
            let mut w = csv::Writer::from_writer(buf);
            w.write_record(header)?;
            for r in rows {
                w.write_record(&r)?;
            }
            w.flush()?;
            Ok(())
        })
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), PipelineError> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| PipelineError::stage("write", e))?;
        bytes.push(b'\n');
        self.write_bytes(name, &bytes)
    }

    /// Registers an existing file (e.g. one reused from a previous run).
    pub fn record_existing(&mut self, name: &str) -> Result<(), PipelineError> {
        let path = self.path(name);
        let bytes = std::fs::read(&path).map_err(|e| PipelineError::io(&path, e))?;
        self.hashes.insert(name.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn exists(&self, name: &str) -> bool {
        self.path(name).is_file()
    }

    pub fn hashes(&self) -> &BTreeMap<String, String> {
        &self.hashes
    }

    pub fn into_hashes(self) -> BTreeMap<String, String> {
        self.hashes
    }
}

/// Hash of every regular file in `dir` by name (non-recursive).
pub fn hash_directory(dir: &Path) -> Result<BTreeMap<String, String>, PipelineError> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| PipelineError::io(dir, e))? {
        let entry = entry.map_err(|e| PipelineError::io(dir, e))?;
        let path = entry.path();
        if path.is_file() {
            let bytes = std::fs::read(&path).map_err(|e| PipelineError::io(&path, e))?;
            out.insert(entry.file_name().to_string_lossy().into_owned(), sha256_hex(&bytes));
        }
    }
    Ok(out)
}

/// `{}` formatting: the shortest string that parses back to the same value.
pub fn fmt_f64(v: f64) -> String {
    v.to_string()
}

pub fn week_tag(week: u32) -> String {
    format!("w{week:02}")
}
