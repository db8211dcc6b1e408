//! CSV/JSON writers and the run manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::Config;

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// Digest of the effective configuration (after command-line overrides).
pub fn config_digest(cfg: &Config) -> String {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    sha256_hex(&json)
}

/// Rows are buffered and written in one go so a failed run leaves no
/// half-written file.
pub struct CsvTable {
    header: String,
    rows: Vec<String>,
}

impl CsvTable {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            header: columns.join(","),
            rows: Vec::new(),
        }
    }

    pub fn row(&mut self, fields: &[String]) {
        self.rows.push(fields.join(","));
    }

    pub fn render(&self, subcommand: &str, digest: &str) -> String {
        let mut out = format!("# drm {subcommand} config_sha256={digest}\n{}\n", self.header);
        for r in &self.rows {
            out.push_str(r);
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub drm_version: &'static str,
    pub argv: Vec<String>,
    pub config: Config,
    pub config_sha256: String,
    pub seed: u64,
    pub workers: usize,
    pub elapsed_seconds: f64,
    pub outputs: Vec<OutputFile>,
}

/// Collects outputs of one subcommand run under `out_dir`.
pub struct RunContext {
    pub subcommand: String,
    pub out_dir: PathBuf,
    pub config: Config,
    pub digest: String,
    pub argv: Vec<String>,
    pub workers: usize,
    started: Instant,
    outputs: Vec<OutputFile>,
}

impl RunContext {
    pub fn new(subcommand: &str, out_dir: PathBuf, config: Config, argv: Vec<String>, workers: usize) -> Result<Self> {
        fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
        let digest = config_digest(&config);
        Ok(Self {
            subcommand: subcommand.to_string(),
            out_dir,
            config,
            digest,
            argv,
            workers,
            started: Instant::now(),
            outputs: Vec::new(),
        })
    }

    fn stem(&self) -> String {
        self.subcommand.replace(' ', "-")
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.out_dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.outputs.push(OutputFile {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len(),
        });
        Ok(path)
    }

    /// Writes `<subcommand>[-suffix].csv`.
    pub fn csv(&mut self, suffix: &str, table: &CsvTable) -> Result<PathBuf> {
        let name = format!("{}{}.csv", self.stem(), suffix);
        let text = table.render(&self.subcommand, &self.digest);
        self.write(&name, text.as_bytes())
    }

    /// Writes `<subcommand>[-suffix].json`.
    pub fn json<T: Serialize>(&mut self, suffix: &str, value: &T) -> Result<PathBuf> {
        let name = format!("{}{}.json", self.stem(), suffix);
        let mut text = serde_json::to_string_pretty(value).expect("report serializes");
        text.push('\n');
        self.write(&name, text.as_bytes())
    }

    /// Writes `<subcommand>.manifest.json` listing every file written so far.
    pub fn finish(self) -> Result<PathBuf> {
        let path = self.out_dir.join(format!("{}.manifest.json", self.stem()));
        let manifest = RunManifest {
            subcommand: self.subcommand,
            drm_version: env!("CARGO_PKG_VERSION"),
            argv: self.argv,
            seed: self.config.run.seed,
            config: self.config,
            config_sha256: self.digest,
            workers: self.workers,
            elapsed_seconds: self.started.elapsed().as_secs_f64(),
            outputs: self.outputs,
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// Shortest round-trip form, switching to exponent notation outside `[1e-4, 1e15)`.
pub fn fmt(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || !a.is_finite() || (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for v in [0.0, 1.0, -0.25, 1.2163256055258643e-15, 3.5e20, 0.97573195257] {
            assert_eq!(fmt(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt(1e-15), "1e-15");
        assert_eq!(fmt(0.5), "0.5");
    }

    #[test]
    fn table_carries_digest_header() {
        let mut t = CsvTable::new(&["a", "b"]);
        t.row(&["1".into(), "2".into()]);
        let text = t.render("quantum evolve", "abc");
        assert_eq!(text, "# drm quantum evolve config_sha256=abc\na,b\n1,2\n");
    }
}
