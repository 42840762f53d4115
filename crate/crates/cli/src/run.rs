//! Run directories: typed TOML reports, TSV tables and the per-run manifest.

use crate::error::{CliError, CliResult};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

pub const REPORT_SCHEMA: &str = "corerec-report";
pub const MANIFEST_SCHEMA: &str = "corerec-manifest";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize)]
struct Meta<'a> {
    schema: &'a str,
    version: u32,
    kind: &'a str,
}

#[derive(Serialize)]
struct Document<'a, T: Serialize> {
    meta: Meta<'a>,
    #[serde(flatten)]
    body: &'a T,
}

#[derive(Serialize)]
struct FileEntry {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    meta: Meta<'a>,
    command: &'a str,
    tool_version: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    out_dir: String,
    args: Vec<String>,
    created_unix: u64,
    config: &'a toml::Table,
    inputs: Vec<FileEntry>,
    outputs: Vec<FileEntry>,
}

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    corerec::Error::Io {
        path: path.to_path_buf(),
        source,
    }
    .into()
}

fn to_toml<T: Serialize + ?Sized>(v: &T) -> CliResult<String> {
    toml::to_string(v).map_err(|e| corerec::Error::Format(format!("cannot serialize report: {e}")).into())
}

/// Exit-2 error for a missing input file, raised before any work starts.
pub fn require_input(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::MissingInput(path.to_path_buf()))
    }
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Serializes `body` under a `[meta]` header naming its kind.
pub fn report_string<T: Serialize>(kind: &str, body: &T) -> CliResult<String> {
    to_toml(&Document {
        meta: Meta {
            schema: REPORT_SCHEMA,
            version: SCHEMA_VERSION,
            kind,
        },
        body,
    })
}

pub struct RunDir {
    dir: PathBuf,
    command: &'static str,
    seed: Option<u64>,
    config: toml::Table,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl RunDir {
    /// Creates `out`, or `$COREREC_OUT/<command>` (`runs/<command>` when unset).
    pub fn create(command: &'static str, out: Option<PathBuf>) -> CliResult<Self> {
        let dir = out.unwrap_or_else(|| {
            std::env::var_os("COREREC_OUT")
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("runs"))
                .join(command)
        });
        std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        Ok(Self {
            dir,
            command,
            seed: None,
            config: toml::Table::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    /// Records a resolved configuration section for the manifest.
    pub fn config<T: Serialize>(&mut self, key: &str, value: &T) -> CliResult<()> {
        let v = toml::Value::try_from(value)
            .map_err(|e| corerec::Error::Format(format!("cannot serialize config {key}: {e}")))?;
        self.config.insert(key.into(), v);
        Ok(())
    }

    /// Registers a file written by other code under this directory.
    pub fn track(&mut self, name: &str) -> PathBuf {
        let p = self.path(name);
        self.outputs.push(p.clone());
        p
    }

    pub fn write_text(&mut self, name: &str, contents: &str) -> CliResult<PathBuf> {
        let p = self.track(name);
        std::fs::write(&p, contents).map_err(|e| io_err(&p, e))?;
        Ok(p)
    }

    pub fn write_report<T: Serialize>(&mut self, name: &str, kind: &str, body: &T) -> CliResult<PathBuf> {
        let text = report_string(kind, body)?;
        self.write_text(name, &text)
    }

    /// Hashes inputs and outputs and writes `manifest.toml`.
    pub fn finish(self) -> CliResult<PathBuf> {
        let entries = |paths: &[PathBuf]| -> CliResult<Vec<FileEntry>> {
            paths
                .iter()
                .map(|p| {
                    Ok(FileEntry {
                        path: p.display().to_string(),
                        sha256: sha256_file(p)?,
                    })
                })
                .collect()
        };
        let created_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let manifest = Manifest {
            meta: Meta {
                schema: MANIFEST_SCHEMA,
                version: SCHEMA_VERSION,
                kind: self.command,
            },
            command: self.command,
            tool_version: env!("CARGO_PKG_VERSION"),
            seed: self.seed,
            out_dir: self.dir.display().to_string(),
            args: std::env::args().collect(),
            created_unix,
            config: &self.config,
            inputs: entries(&self.inputs)?,
            outputs: entries(&self.outputs)?,
        };
        let p = self.dir.join("manifest.toml");
        std::fs::write(&p, to_toml(&manifest)?).map_err(|e| io_err(&p, e))?;
        Ok(p)
    }
}
