use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

/// Everything needed to reproduce and audit one run.
#[derive(Debug, Serialize)]
pub struct ResultEnvelope<'a> {
    pub version: &'static str,
    pub config: &'a RunConfig,
    pub timestamp: String,
    pub payload: Value,
    /// Hex SHA-256 of the compact payload JSON.
    pub checksum: String,
}

impl<'a> ResultEnvelope<'a> {
    pub fn new(config: &'a RunConfig, payload: Value) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION"),
            config,
            timestamp: chrono::Utc::now().to_rfc3339(),
            checksum: checksum(&payload),
            payload,
        }
    }
}

/// Object keys serialize sorted, so the digest depends only on content.
pub fn checksum(payload: &Value) -> String {
    format!("{:x}", Sha256::digest(payload.to_string().as_bytes()))
}

pub fn to_value<T: Serialize>(value: &T) -> Result<Value, CliError> {
    serde_json::to_value(value).map_err(|e| CliError::Computation(format!("cannot serialize result: {e}")))
}

fn output_path(cfg: &RunConfig, extension: &str) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| io_error(&cfg.out_dir, e))?;
    Ok(cfg.out_dir.join(format!("{}.{extension}", cfg.command)))
}

/// Writes via a temporary file in the target directory and renames it into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_error(dir, e))?;
    tmp.write_all(bytes).map_err(|e| io_error(path, e))?;
    tmp.as_file().sync_all().map_err(|e| io_error(path, e))?;
    tmp.persist(path).map_err(|e| io_error(path, e.error))?;
    Ok(())
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Computation(format!("cannot write {}: {e}", path.display()))
}

pub fn write_envelope(cfg: &RunConfig, payload: Value) -> Result<PathBuf, CliError> {
    let envelope = ResultEnvelope::new(cfg, payload);
    let mut text = serde_json::to_string_pretty(&envelope)
        .map_err(|e| CliError::Computation(format!("cannot serialize result: {e}")))?;
    text.push('\n');
    let path = output_path(cfg, "json")?;
    write_atomic(&path, text.as_bytes())?;
    Ok(path)
}

pub fn write_csv<R: Serialize>(cfg: &RunConfig, rows: &[R]) -> Result<PathBuf, CliError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| CliError::Computation(format!("cannot encode CSV row: {e}")))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| CliError::Computation(format!("cannot encode CSV: {e}")))?;
    let path = output_path(cfg, "csv")?;
    write_atomic(&path, &bytes)?;
    Ok(path)
}
