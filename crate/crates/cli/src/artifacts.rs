//! Deterministic CSV and JSON output with provenance headers.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha1::{Digest, Sha1};

use crate::error::CliError;

pub const TOOL_NAME: &str = "cpm-infer";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Git blob id of `content`: SHA-1 over `"blob <len>\0" + content`.
pub fn git_blob_hash(content: &[u8]) -> String {
    let mut h = Sha1::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub experiment: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(experiment: &str, canonical_config: &str, seed: u64) -> Self {
        Self {
            tool: TOOL_NAME,
            version: TOOL_VERSION,
            experiment: experiment.to_string(),
            config_hash: git_blob_hash(canonical_config.as_bytes()),
            seed,
        }
    }

    fn csv_comment(&self) -> String {
        format!(
            "# {} {} experiment={} config={} seed={}\n",
            self.tool, self.version, self.experiment, self.config_hash, self.seed
        )
    }
}

/// Writes into one output directory, creating it on first use.
#[derive(Debug, Clone)]
pub struct ArtifactWriter {
    dir: PathBuf,
    provenance: Provenance,
}

#[derive(Serialize)]
struct JsonArtifact<'a, T: Serialize> {
    meta: &'a Provenance,
    result: &'a T,
}

/// Shortest round-trip decimal; `NaN`/`inf` spelled the way Rust prints them.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

impl ArtifactWriter {
    pub fn new(dir: &Path, provenance: Provenance) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| {
            CliError::Validation(format!(
                "output directory {} is not writable: {e}",
                dir.display()
            ))
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            provenance,
        })
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        fs::write(&path, text)?;
        Ok(path)
    }

    pub fn write_csv(
        &self,
        name: &str,
        header: &[&str],
        rows: &[Vec<String>],
    ) -> Result<PathBuf, CliError> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        let body = w
            .into_inner()
            .map_err(|e| CliError::Io(std::io::Error::other(e.to_string())))?;
        let mut out = self.provenance.csv_comment().into_bytes();
        out.extend_from_slice(&body);
        let path = self.path(name);
        fs::write(&path, out)?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, result: &T) -> Result<PathBuf, CliError> {
        let mut text = serde_json::to_string_pretty(&JsonArtifact {
            meta: &self.provenance,
            result,
        })?;
        text.push('\n');
        self.write_text(name, &text)
    }
}
