//! CSV manifests: `path,label,x0,y0,x1,y1`, box fields empty for negatives.
//! Relative paths resolve against the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::classifier::Label;
use crate::error::{Error, Result};
use crate::imaging::BoundingBox;

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub path: PathBuf,
    pub label: Label,
    pub bbox: Option<BoundingBox>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct Record {
    path: String,
    label: String,
    x0: Option<usize>,
    y0: Option<usize>,
    x1: Option<usize>,
    y1: Option<usize>,
}

pub fn write_manifest(path: impl AsRef<Path>, rows: &[ManifestRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    for r in rows {
        let b = r.bbox;
        w.serialize(Record {
            path: r.path.to_string_lossy().into_owned(),
            label: r.label.as_str().to_owned(),
            x0: b.map(|b| b.x0),
            y0: b.map(|b| b.y0),
            x1: b.map(|b| b.x1),
            y1: b.map(|b| b.y1),
        })
        .map_err(|e| Error::Manifest(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a manifest, resolving relative image paths.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRow>> {
    let path = path.as_ref();
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (line, rec) in rdr.deserialize::<Record>().enumerate() {
        let rec = rec.map_err(|e| Error::Manifest(format!("row {}: {e}", line + 1)))?;
        let label = Label::parse(&rec.label)
            .ok_or_else(|| Error::Manifest(format!("row {}: unknown label {:?}", line + 1, rec.label)))?;
        let bbox = match (rec.x0, rec.y0, rec.x1, rec.y1) {
            (Some(x0), Some(y0), Some(x1), Some(y1)) => Some(BoundingBox::new(x0, y0, x1, y1)?),
            (None, None, None, None) => None,
            _ => return Err(Error::Manifest(format!("row {}: partial box", line + 1))),
        };
        let p = PathBuf::from(&rec.path);
        rows.push(ManifestRow {
            path: if p.is_absolute() { p } else { base.join(p) },
            label,
            bbox,
        });
    }
    if rows.is_empty() {
        return Err(Error::Manifest(format!("{} has no rows", path.display())));
    }
    Ok(rows)
}

/// Hex SHA-256 of a file's bytes.
pub fn file_sha256(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}
