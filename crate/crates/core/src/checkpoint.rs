//! Single-file JSON checkpoints: named weight arrays, template points, configuration and
//! epoch counter. Floats are written in shortest round-trip form, so a save/load cycle is
//! bit-exact.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::deformer::ProjectionConfig;
use crate::mesh::{TemplatePointCloud, TemplateProvenance};
use crate::nn::Parameters;
use crate::training::{ModelConfig, ShapeModel};
use crate::{Error, Result, Scalar};

const FORMAT: &str = "ssmkit-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemplateRecord {
    pub provenance: TemplateProvenance,
    pub points: Vec<[f64; 3]>,
}

/// On-disk layout of a checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointFile {
    pub format: String,
    pub version: u32,
    pub epoch: usize,
    pub config: ModelConfig,
    /// Training configuration of the run that produced the weights, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_config: Option<serde_json::Value>,
    pub projection_sigma: f64,
    pub template: TemplateRecord,
    pub weights: Vec<NamedArray>,
}

impl CheckpointFile {
    pub fn from_model<T: Scalar>(model: &ShapeModel<T>, train_config: Option<serde_json::Value>) -> Self {
        let weights = model
            .named_arrays("")
            .into_iter()
            .map(|(name, data)| NamedArray { name, data: data.into_iter().map(|v| v.as_f64()).collect() })
            .collect();
        let points =
            model.template.points.rows().into_iter().map(|r| [r[0].as_f64(), r[1].as_f64(), r[2].as_f64()]).collect();
        Self {
            format: FORMAT.into(),
            version: VERSION,
            epoch: model.epoch,
            config: model.config.clone(),
            train_config,
            projection_sigma: model.projection.sigma().as_f64(),
            template: TemplateRecord { provenance: model.template.provenance, points },
            weights,
        }
    }

    pub fn into_model<T: Scalar>(self) -> Result<ShapeModel<T>> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported format {} v{}", self.format, self.version)));
        }
        let m = self.template.points.len();
        let flat: Vec<T> = self.template.points.iter().flat_map(|p| p.iter().map(|&v| T::lit(v))).collect();
        let template = TemplatePointCloud {
            points: Array2::from_shape_vec((m, 3), flat).expect("three columns"),
            provenance: self.template.provenance,
        };
        let projection = ProjectionConfig::new(T::lit(self.projection_sigma))?;
        let mut model = ShapeModel::new(self.config, template, projection, 0)?;
        let mut arrays = self.weights.into_iter();
        let mut problem: Option<String> = None;
        model.visit_params_mut("", &mut |name, dst| {
            if problem.is_some() {
                return;
            }
            match arrays.next() {
                Some(a) if a.name == name && a.data.len() == dst.len() => {
                    for (d, s) in dst.iter_mut().zip(&a.data) {
                        *d = T::lit(*s);
                    }
                }
                Some(a) => {
                    problem = Some(format!(
                        "array {} (len {}) does not match expected {name} (len {})",
                        a.name,
                        a.data.len(),
                        dst.len()
                    ))
                }
                None => problem = Some(format!("missing array {name}")),
            }
        });
        if let Some(p) = problem {
            return Err(Error::Checkpoint(p));
        }
        if let Some(extra) = arrays.next() {
            return Err(Error::Checkpoint(format!("unexpected array {}", extra.name)));
        }
        if !model.all_finite() {
            return Err(Error::Checkpoint("non-finite weights".into()));
        }
        model.epoch = self.epoch;
        Ok(model)
    }
}

pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    model: &ShapeModel<T>,
    train_config: Option<serde_json::Value>,
) -> Result<()> {
    let file = CheckpointFile::from_model(model, train_config);
    let text = serde_json::to_string(&file).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<ShapeModel<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CheckpointFile = serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
    file.into_model()
}
