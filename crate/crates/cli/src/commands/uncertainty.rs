use serde::Serialize;
use ssmkit_core::deformer::{chamfer_distance, ChamferNorm};
use ssmkit_core::metrics::point_to_mesh;
use ssmkit_core::random::derive_seed;
use ssmkit_core::uncertainty::{correlate, estimate_uncertainty, flag_outliers, Correlation};

use crate::error::CliResult;
use crate::output::{file_stem, load_manifest_cohort, load_model, num, RunDir, Table};
use crate::svg::scatter;
use crate::UncertaintyArgs;

const STREAM_SUBJECT: u64 = 21;

#[derive(Serialize)]
struct Correlations {
    chamfer: Option<Correlation>,
    p2m: Option<Correlation>,
}

pub fn run(a: &UncertaintyArgs) -> CliResult<()> {
    let model = load_model(&a.model)?;
    let cohort = load_manifest_cohort(&a.manifest)?;
    let dir = RunDir::create(&a.out)?;
    super::snapshot(&dir, "uncertainty", a, &model.config)?;
    let map_dir = dir.subdir("umaps")?;
    let mut scatter_rows = Table::new(&["subject", "scalar_uncertainty", "CD", "P2M"]);
    let (mut unc, mut cds, mut p2ms) = (Vec::new(), Vec::new(), Vec::new());
    for (i, mesh) in cohort.meshes.iter().enumerate() {
        let (_, umap) = estimate_uncertainty(&model, mesh, a.samples, derive_seed(a.seed, STREAM_SUBJECT, i as u64))?;
        dir.write(map_dir.join(format!("{}.csv", file_stem(&mesh.subject_id))), umap.to_csv())?;
        let pred = model.predict(mesh)?;
        let cd = chamfer_distance(&mesh.vertex_matrix(), &pred.points, ChamferNorm::L2)?;
        let p2m = point_to_mesh(&pred.points, mesh)?;
        scatter_rows.push(vec![mesh.subject_id.clone(), num(umap.sample_scalar), num(cd), num(p2m)]);
        unc.push(umap.sample_scalar);
        cds.push(cd);
        p2ms.push(p2m);
    }
    dir.write_csv("scatter.csv", &scatter_rows)?;

    let corr = |err: &[f64], name: &str| match correlate(&unc, err) {
        Ok(c) => Some(c),
        Err(e) => {
            log::warn!("uncertainty/{name} correlation unavailable: {e}");
            None
        }
    };
    let correlations = Correlations { chamfer: corr(&cds, "CD"), p2m: corr(&p2ms, "P2M") };
    dir.write_json("correlation.json", &correlations)?;
    let mut flagged = Table::new(&["rank", "subject", "scalar_uncertainty", "CD"]);
    for (r, &i) in flag_outliers(&unc, &cds, a.top_k).iter().enumerate() {
        flagged.push(vec![(r + 1).to_string(), cohort.meshes[i].subject_id.clone(), num(unc[i]), num(cds[i])]);
    }
    dir.write_csv("outliers.csv", &flagged)?;
    let points: Vec<(f64, f64)> = unc.iter().cloned().zip(cds.iter().cloned()).collect();
    let ids: Vec<String> = cohort.meshes.iter().map(|m| m.subject_id.clone()).collect();
    dir.write("scatter.svg", scatter("Uncertainty vs error", "scalar uncertainty", "chamfer", &points, Some(&ids)))?;
    Ok(())
}
