//! Run-directory layout and the loaders shared by several commands.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Serialize;
use ssmkit_core::deformer::{read_particles, write_particles, CorrespondenceSet};
use ssmkit_core::mesh::{load_mesh, read_manifest, Cohort, ManifestEntry, MeshFormat, SurfaceMesh};
use ssmkit_core::training::ShapeModel;

use crate::error::{CliError, CliResult};

/// Output directory of one command. Every artifact is written beneath it.
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.root.join(rel)
    }

    pub fn subdir(&self, rel: &str) -> CliResult<PathBuf> {
        let p = self.path(rel);
        fs::create_dir_all(&p).map_err(|e| CliError::io(&p, e))?;
        Ok(p)
    }

    pub fn write(&self, rel: impl AsRef<Path>, contents: impl AsRef<[u8]>) -> CliResult<PathBuf> {
        let p = self.path(rel);
        fs::write(&p, contents).map_err(|e| CliError::io(&p, e))?;
        Ok(p)
    }

    pub fn write_json<S: Serialize>(&self, rel: &str, value: &S) -> CliResult<PathBuf> {
        let text = serde_json::to_string_pretty(value).expect("serializable value");
        self.write(rel, text + "\n")
    }

    pub fn write_csv(&self, rel: impl AsRef<Path>, table: &Table) -> CliResult<PathBuf> {
        self.write(rel, table.to_csv())
    }

    pub fn write_particles(&self, rel: impl AsRef<Path>, points: &Array2<f64>) -> CliResult<PathBuf> {
        let p = self.path(rel);
        write_particles(&p, points)?;
        Ok(p)
    }
}

/// Minimal CSV builder; fields are quoted only when needed.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory csv");
        for r in &self.rows {
            w.write_record(r).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
    }
}

/// Formats a float in shortest round-trip form.
pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn load_model(path: &Path) -> CliResult<ShapeModel<f64>> {
    Ok(ssmkit_core::checkpoint::load_checkpoint(path)?)
}

pub fn load_manifest_cohort(path: &Path) -> CliResult<Cohort<f64>> {
    let cohort = ssmkit_core::mesh::load_cohort(path)?;
    if cohort.is_empty() {
        log::warn!("manifest {} lists no meshes", path.display());
    }
    Ok(cohort)
}

/// Loads each manifest entry on its own so one bad mesh does not abort the batch.
pub fn load_entries(path: &Path) -> CliResult<Vec<(ManifestEntry, ssmkit_core::Result<SurfaceMesh<f64>>)>> {
    let entries = read_manifest(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    Ok(entries
        .into_iter()
        .map(|entry| {
            let p = if entry.path.is_absolute() { entry.path.clone() } else { base.join(&entry.path) };
            let mesh = match MeshFormat::from_path(&p) {
                Some(format) => load_mesh(&p, format).map(|mut m| {
                    m.subject_id = entry.subject_id.clone();
                    m
                }),
                None => Err(ssmkit_core::Error::Parse {
                    path: p.clone(),
                    message: "unknown mesh extension (expected .ply or .obj)".into(),
                }),
            };
            (entry, mesh)
        })
        .collect())
}

/// Subject ids are used as file stems; anything outside `[A-Za-z0-9._-]` becomes `_`.
pub fn file_stem(subject_id: &str) -> String {
    subject_id.chars().map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' }).collect()
}

/// Correspondences of every subject of `cohort`, either predicted by a model or read from a
/// directory of `<subject_id>.particles` files.
pub fn gather_correspondences(
    cohort: &Cohort<f64>,
    model: Option<&ShapeModel<f64>>,
    particles: Option<&Path>,
) -> CliResult<Vec<CorrespondenceSet<f64>>> {
    match (model, particles) {
        (Some(model), None) => cohort.meshes.iter().map(|m| Ok(model.predict(m)?)).collect(),
        (None, Some(dir)) => cohort
            .meshes
            .iter()
            .map(|m| {
                let p = dir.join(format!("{}.particles", file_stem(&m.subject_id)));
                Ok(CorrespondenceSet { points: read_particles(&p)?, subject_id: m.subject_id.clone(), projected: true })
            })
            .collect(),
        _ => Err(CliError::Usage("pass exactly one of --model or --particles".into())),
    }
}
