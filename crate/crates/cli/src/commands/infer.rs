use serde::Serialize;
use ssmkit_core::deformer::{chamfer_distance, ChamferNorm};

use crate::error::{CliError, CliResult};
use crate::output::{file_stem, load_entries, load_model, num, RunDir, Table};
use crate::InferArgs;

#[derive(Serialize)]
struct Failure {
    subject_id: String,
    error: String,
}

#[derive(Serialize)]
struct Summary {
    total: usize,
    written: usize,
    failures: Vec<Failure>,
}

pub fn run(a: &InferArgs) -> CliResult<()> {
    let model = load_model(&a.model)?;
    let entries = load_entries(&a.manifest)?;
    let dir = RunDir::create(&a.out)?;
    super::snapshot(&dir, "infer", a, &model.config)?;
    if entries.is_empty() {
        log::warn!("manifest {} lists no meshes; nothing to infer", a.manifest.display());
    }
    let particle_dir = dir.subdir("particles")?;
    let mut table = Table::new(&["subject_id", "split", "chamfer"]);
    let mut failures = Vec::new();
    for (entry, mesh) in &entries {
        let result = mesh.as_ref().map_err(|e| e.to_string()).and_then(|mesh| {
            let pred = model.predict(mesh).map_err(|e| e.to_string())?;
            let cd =
                chamfer_distance(&mesh.vertex_matrix(), &pred.points, ChamferNorm::L2).map_err(|e| e.to_string())?;
            Ok((pred, cd))
        });
        match result {
            Ok((pred, cd)) => {
                let path = particle_dir.join(format!("{}.particles", file_stem(&entry.subject_id)));
                ssmkit_core::deformer::write_particles(&path, &pred.points)?;
                table.push(vec![entry.subject_id.clone(), entry.split.as_str().into(), num(cd)]);
            }
            Err(error) => {
                log::warn!("{}: {error}", entry.subject_id);
                failures.push(Failure { subject_id: entry.subject_id.clone(), error });
            }
        }
    }
    dir.write_csv("predictions.csv", &table)?;
    let summary = Summary { total: entries.len(), written: entries.len() - failures.len(), failures };
    dir.write_json("infer_summary.json", &summary)?;
    if summary.failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Partial { failed: summary.failures.len(), total: summary.total })
    }
}
