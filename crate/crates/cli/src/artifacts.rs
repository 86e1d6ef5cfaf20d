//! Input parsing and atomic output of reports, tidy CSV and run manifests.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const OUT_DIR_ENV: &str = "WDIFF_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "wdiff-out";

/// Inline JSON (starting with `{` or `[`) or a path to a JSON file.
pub fn read_json_arg(arg: &str, name: &str) -> CliResult<(String, serde_json::Value)> {
    let trimmed = arg.trim_start();
    let (label, text) = if trimmed.starts_with('{') || trimmed.starts_with('[') {
        (format!("--{name}"), arg.to_string())
    } else {
        let path = PathBuf::from(arg);
        let text = fs::read_to_string(&path).map_err(|source| CliError::Read {
            path: path.clone(),
            source,
        })?;
        (path.display().to_string(), text)
    };
    let value = serde_json::from_str(&text).map_err(|e| CliError::input(&label, "", e.to_string()))?;
    Ok((label, value))
}

/// Deserialize with the failing location reported as a JSON pointer.
pub fn decode<T: DeserializeOwned>(label: &str, value: &serde_json::Value) -> CliResult<T> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let mut pointer = pointer_of(e.path());
        let reason = e.inner().to_string();
        if let Some(key) = unknown_key(&reason).filter(|k| !pointer.ends_with(&format!("/{k}"))) {
            pointer.push('/');
            pointer.push_str(key);
        }
        CliError::input(label, pointer, reason)
    })
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{}", key.replace('~', "~0").replace('/', "~1"))),
            Segment::Enum { variant } => out.push_str(&format!("/{variant}")),
            Segment::Unknown => {}
        }
    }
    out
}

fn unknown_key(reason: &str) -> Option<&str> {
    let rest = reason.strip_prefix("unknown field `")?;
    rest.split('`').next()
}

/// Comma-separated floats.
pub fn parse_point(text: &str, name: &str) -> CliResult<Vec<f64>> {
    text.split(',')
        .enumerate()
        .map(|(i, s)| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| CliError::input(format!("--{name}"), format!("/{i}"), format!("`{}`: {e}", s.trim())))
        })
        .collect()
}

pub fn resolve_out_dir(flag: Option<&Path>) -> PathBuf {
    match flag {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os(OUT_DIR_ENV).map_or_else(|| PathBuf::from(DEFAULT_OUT_DIR), PathBuf::from),
    }
}

/// One long-format row of plot data.
#[derive(Debug, Clone, Serialize)]
pub struct TidyRow {
    pub run_id: String,
    pub t: f64,
    pub statistic: String,
    pub value: f64,
    pub se: f64,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    run_id: &'a str,
    command: &'a str,
    spec_hash: &'a str,
    spec: &'a serde_json::Value,
    seed: Option<u64>,
    versions: Versions,
    pass: bool,
    artifacts: &'a [String],
    created_unix: u64,
}

#[derive(Debug, Serialize)]
struct Versions {
    wdiff: &'static str,
    wdiff_cli: &'static str,
}

/// Output directory, spec hash and the list of files written for one run.
pub struct Run {
    dir: PathBuf,
    command: &'static str,
    spec: serde_json::Value,
    spec_hash: String,
    seed: Option<u64>,
    artifacts: Vec<String>,
}

impl Run {
    /// `spec` holds the command parameters and the contents of every input file.
    pub fn new(dir: PathBuf, command: &'static str, spec: serde_json::Value, seed: Option<u64>) -> CliResult<Self> {
        fs::create_dir_all(&dir).map_err(|e| CliError::Write {
            path: dir.clone(),
            reason: e.to_string(),
        })?;
        let canonical = serde_json::to_vec(&spec).expect("JSON values serialize");
        let spec_hash = hex(&Sha256::digest(&canonical));
        Ok(Run {
            dir,
            command,
            spec,
            spec_hash,
            seed,
            artifacts: Vec::new(),
        })
    }

    pub fn run_id(&self) -> &str {
        &self.spec_hash[..12]
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<PathBuf> {
        let mut bytes = serde_json::to_vec_pretty(value).expect("reports serialize");
        bytes.push(b'\n');
        self.write_bytes(name, &bytes)
    }

    pub fn write_tidy_csv(&mut self, name: &str, rows: &[TidyRow]) -> CliResult<PathBuf> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in rows {
            w.serialize(row).map_err(|e| self.write_error(name, e))?;
        }
        let bytes = w.into_inner().map_err(|e| self.write_error(name, e))?;
        self.write_bytes(name, &bytes)
    }

    pub fn write_csv_records(&mut self, name: &str, header: &[String], records: &[Vec<String>]) -> CliResult<PathBuf> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).map_err(|e| self.write_error(name, e))?;
        for r in records {
            w.write_record(r).map_err(|e| self.write_error(name, e))?;
        }
        let bytes = w.into_inner().map_err(|e| self.write_error(name, e))?;
        self.write_bytes(name, &bytes)
    }

    /// Write `bytes` to `path` (absolute, or relative to the output directory) atomically.
    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.dir.join(name);
        write_atomic(&path, bytes)?;
        self.artifacts.push(path.display().to_string());
        Ok(path)
    }

    fn write_error(&self, name: &str, e: impl std::fmt::Display) -> CliError {
        CliError::Write {
            path: self.dir.join(name),
            reason: e.to_string(),
        }
    }

    /// Write the manifest last, so its presence marks a complete run.
    pub fn finish(self, pass: bool) -> CliResult<()> {
        let created_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        let manifest = Manifest {
            run_id: self.run_id(),
            command: self.command,
            spec_hash: &self.spec_hash,
            spec: &self.spec,
            seed: self.seed,
            versions: Versions {
                wdiff: wdiff::VERSION,
                wdiff_cli: env!("CARGO_PKG_VERSION"),
            },
            pass,
            artifacts: &self.artifacts,
            created_unix,
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        bytes.push(b'\n');
        let path = self.dir.join("manifest.json");
        write_atomic(&path, &bytes)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let err = |e: &dyn std::fmt::Display| CliError::Write {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let parent = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(parent).map_err(|e| err(&e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(parent).map_err(|e| err(&e))?;
    tmp.write_all(bytes).map_err(|e| err(&e))?;
    tmp.as_file().sync_all().map_err(|e| err(&e))?;
    tmp.persist(path).map_err(|e| err(&e.error))?;
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
