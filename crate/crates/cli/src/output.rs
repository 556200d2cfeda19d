//! Provenance-stamped output files.

use std::io::Write;
use std::path::Path;

use qreadout::scan::{Provenance, VERSION};
use qreadout::{Error, Result};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// `# key value` comment lines for CSV outputs without a run config.
pub fn header(constants_sha256: &str) -> String {
    Provenance::new("none", constants_sha256).header()
}

pub fn provenance_json(config_sha256: &str, constants_sha256: &str) -> Value {
    json!({ "version": VERSION, "config_sha256": config_sha256, "constants_sha256": constants_sha256 })
}

/// Writes `bytes` to `path` atomically (temp file in the same directory).
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

pub fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source }
}

/// Pretty JSON to `path`, or to stdout when `path` is `None`.
pub fn emit_json<T: Serialize>(report: &T, path: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    match path {
        Some(p) => write_file(p, text.as_bytes()),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| io_err(Path::new("<stdout>"), e)),
    }
}

/// Human-readable lines go to stdout when the report went to a file, else
/// to stderr so stdout stays machine-readable.
pub fn summary(report_to_file: bool, text: &str) {
    if report_to_file {
        print!("{text}");
    } else {
        eprint!("{text}");
    }
}
