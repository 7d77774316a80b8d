use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{load_mesh, Cohort, MeshFormat, Split};
use crate::{Error, Result, Scalar};

/// One row of a cohort manifest. Relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub subject_id: String,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_label: Option<String>,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let text = serde_json::to_string_pretty(entries).map_err(|e| Error::parse(path, e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Loads every mesh listed in a manifest; the manifest's subject id replaces the file stem.
pub fn load_cohort<T: Scalar>(manifest_path: &Path) -> Result<Cohort<T>> {
    let entries = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut meshes = Vec::with_capacity(entries.len());
    let mut splits = Vec::with_capacity(entries.len());
    let mut labels = Vec::with_capacity(entries.len());
    for entry in entries {
        let path = if entry.path.is_absolute() { entry.path.clone() } else { base.join(&entry.path) };
        let format = MeshFormat::from_path(&path)
            .ok_or_else(|| Error::parse(&path, "unknown mesh extension (expected .ply or .obj)"))?;
        let mut mesh = load_mesh(&path, format)?;
        mesh.subject_id = entry.subject_id;
        meshes.push(mesh);
        splits.push(entry.split);
        labels.push(entry.group_label);
    }
    Cohort::with_labels(meshes, splits, labels)
}
