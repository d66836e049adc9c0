//! JSON-lines dataset manifests.

use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retrieval::{PlaceTag, Pose};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    /// Relative paths resolve against the manifest's directory.
    pub image: PathBuf,
    pub easting_m: f64,
    pub northing_m: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heading_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<Pose>,
}

impl ManifestRecord {
    pub fn tag(&self) -> PlaceTag {
        PlaceTag {
            id: self.id.clone(),
            easting: self.easting_m,
            northing: self.northing_m,
            heading_deg: self.heading_deg,
            pose: self.pose,
        }
    }
}

pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestRecord>> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut rec: ManifestRecord = serde_json::from_str(line)
            .map_err(|e| Error::validation(format!("manifest line {}: {e}", lineno + 1)))?;
        let mut finite = vec![rec.easting_m, rec.northing_m];
        finite.extend(rec.heading_deg);
        if let Some(p) = rec.pose {
            finite.extend([p.x, p.y, p.z, p.yaw, p.pitch, p.roll]);
        }
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation(format!("manifest line {}: non-finite coordinate", lineno + 1)));
        }
        if !ids.insert(rec.id.clone()) {
            return Err(Error::validation(format!("manifest line {}: duplicate id `{}`", lineno + 1, rec.id)));
        }
        if rec.image.is_relative() {
            rec.image = base.join(&rec.image);
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let text = std::fs::read_to_string(path)?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new(".")))
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}
