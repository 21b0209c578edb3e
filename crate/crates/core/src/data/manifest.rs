//! JSON-lines dataset manifest: one `{id, offset, label, split}` object per
//! sample.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which side of the train/test partition a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: u32,
    pub offset: u64,
    pub label: u8,
    pub split: Split,
}

/// Check id uniqueness, strictly increasing offsets, and label range.
pub fn validate_manifest(entries: &[ManifestEntry]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for e in entries {
        if !seen.insert(e.id) {
            return Err(Error::Input(format!("duplicate manifest id {}", e.id)));
        }
        if e.label > 1 {
            return Err(Error::Input(format!("manifest label {} outside {{0, 1}}", e.label)));
        }
    }
    for w in entries.windows(2) {
        if w[1].offset <= w[0].offset {
            return Err(Error::Input(format!(
                "manifest offsets not strictly increasing at id {}",
                w[1].id
            )));
        }
    }
    Ok(())
}

pub fn write_manifest(entries: &[ManifestEntry], path: &Path) -> Result<()> {
    validate_manifest(entries)?;
    let mut w = BufWriter::new(File::create(path)?);
    for e in entries {
        serde_json::to_writer(&mut w, e)
            .map_err(|e| Error::Input(format!("manifest serialization: {e}")))?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let r = BufReader::new(File::open(path)?);
    let mut entries = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| {
            Error::Input(format!("manifest line {}: {e}", lineno + 1))
        })?;
        entries.push(entry);
    }
    validate_manifest(&entries)?;
    Ok(entries)
}
