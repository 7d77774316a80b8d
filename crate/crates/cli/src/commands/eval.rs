use ssmkit_core::deformer::{chamfer_distance, ChamferNorm};
use ssmkit_core::mesh::{select_medoid, Cohort, Split};
use ssmkit_core::metrics::{
    point_to_mesh, reconstruct_mesh, ssm_curves, ssm_curves_csv, surface_to_surface, CorrespondenceMatrix,
};

use crate::error::CliResult;
use crate::output::{gather_correspondences, load_manifest_cohort, load_model, num, RunDir, Table};
use crate::svg::{line_panels, Panel, Series};
use crate::EvalArgs;

pub fn run(a: &EvalArgs) -> CliResult<()> {
    let model = load_model(&a.model)?;
    let cohort = load_manifest_cohort(&a.manifest)?;
    let dir = RunDir::create(&a.out)?;
    super::snapshot(&dir, "eval", a, &model.config)?;
    let preds = gather_correspondences(&cohort, Some(&model), None)?;

    // surfaces are rebuilt by warping the medoid training mesh with its own prediction
    let mut train_idx = cohort.indices(Split::Train);
    if train_idx.is_empty() {
        log::warn!("no training subjects in the manifest; using every subject as the reference pool");
        train_idx = (0..cohort.len()).collect();
    }
    let mut surface = Table::new(&["subject_id", "split", "chamfer", "p2m", "s2s"]);
    let mut totals = [Vec::new(), Vec::new(), Vec::new()];
    if !train_idx.is_empty() {
        let pool = Cohort::all_train(train_idx.iter().map(|&i| cohort.meshes[i].clone()).collect());
        let reference = select_medoid(&pool)?;
        let reference_pred = model.predict(reference)?;
        for (i, (mesh, pred)) in cohort.meshes.iter().zip(&preds).enumerate() {
            let cd = chamfer_distance(&mesh.vertex_matrix(), &pred.points, ChamferNorm::L2)?;
            let p2m = point_to_mesh(&pred.points, mesh)?;
            let s2s = surface_to_surface(mesh, &reconstruct_mesh(pred, &reference_pred, reference)?)?;
            for (t, v) in totals.iter_mut().zip([cd, p2m, s2s]) {
                t.push(v);
            }
            surface.push(vec![mesh.subject_id.clone(), cohort.splits[i].as_str().into(), num(cd), num(p2m), num(s2s)]);
        }
    }
    dir.write_csv("surface_metrics.csv", &surface)?;
    let mut summary = Table::new(&["metric", "mean", "std", "n"]);
    for (name, values) in ["chamfer", "p2m", "s2s"].iter().zip(&totals) {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n.max(1.0);
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
        summary.push(vec![name.to_string(), num(mean), num(var.sqrt()), values.len().to_string()]);
    }
    dir.write_csv("surface_summary.csv", &summary)?;

    let train_rows = cohort.indices(Split::Train);
    let mut held_rows: Vec<usize> = cohort.indices(Split::Val).into_iter().chain(cohort.indices(Split::Test)).collect();
    held_rows.sort_unstable();
    if held_rows.is_empty() {
        log::warn!("no held-out subjects; generalization is measured on the training subjects");
        held_rows = train_rows.clone();
    }
    let curves = if train_rows.len() >= 2 {
        let all = CorrespondenceMatrix::from_sets(&preds)?;
        ssm_curves(&all.subset(&train_rows), &all.subset(&held_rows), a.max_modes, a.specificity_samples, a.seed)?
    } else {
        log::warn!("fewer than two training subjects; SSM curves are empty");
        Vec::new()
    };
    dir.write("ssm_curves.csv", ssm_curves_csv(&curves))?;
    let panel = |title: &str, f: &dyn Fn(&ssmkit_core::metrics::SsmCurveRow) -> f64| Panel {
        title: title.into(),
        xlabel: "modes".into(),
        ylabel: title.to_lowercase(),
        series: vec![Series { name: title.into(), points: curves.iter().map(|r| (r.mode as f64, f(r))).collect() }],
    };
    let panels = [
        panel("Compactness", &|r| r.compactness),
        panel("Generalization", &|r| r.generalization),
        panel("Specificity", &|r| r.specificity),
    ];
    dir.write("ssm_curves.svg", line_panels(&panels))?;
    Ok(())
}
