//! Dataset manifest: JSON listing every case's files (relative to the
//! manifest's directory), its acquisition spacing and its split.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use diff2ct_core::projector::{projected_dims, ProjectionPlane};
use diff2ct_core::{AxisTag, Image2D, Volume};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{read_image, read_volume, write_bytes};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseRecord {
    pub case_id: String,
    pub ct: String,
    pub xray_lateral: String,
    pub xray_frontal: String,
    pub original_spacing: [f64; 3],
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub cases: Vec<CaseRecord>,
}

/// A parsed case with its files checked against each other.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedCase {
    pub record: CaseRecord,
    pub ct: Volume,
    pub lateral: Image2D,
    pub frontal: Image2D,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_bytes(path.as_ref(), self.to_json().as_bytes())
    }

    /// Parses and checks ids and version; file existence is checked by [`Manifest::load_case`].
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        let m: Manifest = serde_json::from_str(&text).map_err(Error::json(path))?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Manifest(format!("unsupported version {} (expected {MANIFEST_VERSION})", m.version)));
        }
        let mut seen = BTreeSet::new();
        for c in &m.cases {
            if !seen.insert(c.case_id.as_str()) {
                return Err(Error::Manifest(format!("duplicate case_id `{}`", c.case_id)));
            }
            if c.original_spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                return Err(Error::Manifest(format!("case `{}` has invalid original_spacing", c.case_id)));
            }
        }
        Ok(m)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &CaseRecord> {
        self.cases.iter().filter(move |c| c.split == split)
    }
}

/// Directory that relative manifest paths are resolved against.
pub fn base_dir(manifest_path: &Path) -> PathBuf {
    manifest_path.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn load_case(base: &Path, record: &CaseRecord) -> Result<LoadedCase> {
    let ct = read_volume(base.join(&record.ct))?;
    let lateral = read_image(base.join(&record.xray_lateral))?;
    let frontal = read_image(base.join(&record.xray_frontal))?;
    for (img, tag, plane, file) in [
        (&lateral, AxisTag::AlongX, ProjectionPlane::Sagittal, &record.xray_lateral),
        (&frontal, AxisTag::AlongY, ProjectionPlane::Coronal, &record.xray_frontal),
    ] {
        let want = projected_dims(ct.dims(), plane);
        if img.axis() != tag || img.dims() != want {
            return Err(Error::Manifest(format!(
                "case `{}`: {file} is {:?} {:?}, CT {:?} needs {} {want:?}",
                record.case_id,
                img.axis().name(),
                img.dims(),
                ct.dims(),
                tag.name()
            )));
        }
    }
    Ok(LoadedCase { record: record.clone(), ct, lateral, frontal })
}
