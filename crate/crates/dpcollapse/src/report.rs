//! Artifact emitters: RFC-4180 CSV (CRLF, header row, full-precision
//! scientific numbers), aligned text reports with equation tags per
//! quantity, and the JSON run manifest.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::constants::PhysicalConstants;
use crate::error::{Error, Result};

/// Full-precision scientific formatting; 17 significant digits round-trip
/// any f64 exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_escape(field: &str) -> String {
    if field.contains(',') || field.contains('"') || field.contains('\n') || field.contains('\r') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Write an RFC-4180 CSV: CRLF line endings, header first, then rows, then
/// optional `# ` comment footer lines.  Empty row sets are an error and no
/// file is created.
pub fn write_csv(
    path: &Path,
    header: &[&str],
    rows: &[Vec<String>],
    footer_comments: &[String],
) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "refusing to write empty results to {}",
            path.display()
        )));
    }
    let mut out = String::new();
    out.push_str(&header.iter().map(|h| csv_escape(h)).collect::<Vec<_>>().join(","));
    out.push_str("\r\n");
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::InvalidParameter(format!(
                "row width {} does not match header width {}",
                row.len(),
                header.len()
            )));
        }
        out.push_str(&row.iter().map(|f| csv_escape(f)).collect::<Vec<_>>().join(","));
        out.push_str("\r\n");
    }
    for line in footer_comments {
        out.push_str("# ");
        out.push_str(line);
        out.push_str("\r\n");
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

/// Aligned `name [tag]: value` text block.
pub fn write_text_report(path: &Path, title: &str, lines: &[(String, String)]) -> Result<()> {
    if lines.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "refusing to write an empty report to {}",
            path.display()
        )));
    }
    let width = lines.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::new();
    out.push_str(title);
    out.push('\n');
    out.push_str(&"-".repeat(title.len()));
    out.push('\n');
    for (k, v) in lines {
        out.push_str(&format!("{k:<width$}  {v}\n"));
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

/// Reproducibility manifest written next to every command's artifacts.
/// Deterministic serialization: BTreeMap keys, no timestamps.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub package_version: String,
    pub config_sha256: String,
    pub constants: PhysicalConstants,
    pub seed: u64,
    pub threads: usize,
    pub overrides: Vec<String>,
    pub artifacts: Vec<String>,
    pub notes: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, config_text: &str, constants: PhysicalConstants, seed: u64, threads: usize) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(config_text.as_bytes());
        RunManifest {
            command: command.to_string(),
            package_version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: format!("{:x}", hasher.finalize()),
            constants,
            seed,
            threads,
            overrides: Vec::new(),
            artifacts: Vec::new(),
            notes: BTreeMap::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::ConfigParse(format!("manifest serialization: {e}")))?;
        std::fs::write(&path, text)?;
        Ok(path)
    }
}
