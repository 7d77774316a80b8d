//! End-to-end criteria sharing one default training run on the superellipsoid cohort.

use std::time::Instant;

use ssmkit_core::analysis::{classify_correspondences, ClassifierConfig};
use ssmkit_core::deformer::{chamfer_distance, ChamferNorm};
use ssmkit_core::mesh::{Cohort, Split};
use ssmkit_core::metrics::{compactness, fit_pca, point_to_mesh, CorrespondenceMatrix};
use ssmkit_core::synthetic::{generate_cohort, CohortSpec, FactorRanges};
use ssmkit_core::training::{train_model, ModelConfig, ShapeModel, TrainConfig, TrainStatus};
use ssmkit_core::uncertainty::{correlate, estimate_uncertainty};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::common::{dist, ensure, Check};

const CHAMFER_FRACTION: f64 = 0.05;
const COMPACTNESS_TARGET: f64 = 0.99;
const EXTRA_MODES: usize = 2;
const UNCERTAINTY_SAMPLES: usize = 30;
const SIGNIFICANCE: f64 = 0.05;
const CLASSIFY_ALPHA: f64 = 0.01;

pub struct Trained {
    pub cohort: Cohort<f64>,
    pub free_factors: usize,
    pub model: ShapeModel<f64>,
    pub epochs: usize,
    pub seconds: f64,
}

/// N=40, K=642, M=256 with every training default, 300 epochs.
pub fn train_default() -> Result<Trained, String> {
    let (cohort, table) = generate_cohort::<f64>(&CohortSpec::default()).map_err(|e| e.to_string())?;
    let model = ShapeModel::initialize(&cohort, ModelConfig::default(), 0).map_err(|e| e.to_string())?;
    let cfg = TrainConfig::default();
    let t0 = Instant::now();
    let out = train_model(model, &cohort, &cfg, &mut |_| {}).map_err(|e| e.to_string())?;
    if out.status != TrainStatus::Completed {
        return Err(format!("training ended with {:?}", out.status));
    }
    Ok(Trained {
        cohort,
        free_factors: table.free_factor_count(),
        model: out.model,
        epochs: cfg.epochs,
        seconds: t0.elapsed().as_secs_f64(),
    })
}

pub fn end_to_end(t: &Trained) -> Check {
    let test = t.cohort.split_meshes(Split::Test);
    let spacing = t.cohort.meshes[0].mean_edge_length();
    let (mut cd, mut p2m, mut edge) = (0.0, 0.0, 0.0);
    for mesh in &test {
        let pred = t.model.predict(mesh).map_err(|e| e.to_string())?;
        cd += chamfer_distance(&mesh.vertex_matrix(), &pred.points, ChamferNorm::L2).map_err(|e| e.to_string())?;
        p2m += point_to_mesh(&pred.points, mesh).map_err(|e| e.to_string())?;
        edge += mesh.mean_edge_length();
    }
    let n = test.len() as f64;
    let (cd, p2m, edge) = (cd / n, p2m / n, edge / n);
    let ratio = cd / (spacing * spacing);

    let preds =
        t.cohort.meshes.iter().map(|m| t.model.predict(m)).collect::<Result<Vec<_>, _>>().map_err(|e| e.to_string())?;
    let x = CorrespondenceMatrix::from_sets(&preds).map_err(|e| e.to_string())?;
    let pca = fit_pca(&x.subset(&t.cohort.indices(Split::Train))).map_err(|e| e.to_string())?;
    let modes = (t.free_factors + EXTRA_MODES).min(pca.rank());
    let comp = compactness(&pca, modes).map_err(|e| e.to_string())?;
    ensure(
        ratio < CHAMFER_FRACTION && p2m < edge && comp >= COMPACTNESS_TARGET,
        format!(
            "test chamfer {:.3} x spacing^2 (target < {CHAMFER_FRACTION}), P2M {p2m:.4} vs edge {edge:.4}, compactness {comp:.4} at {modes} modes, {} epochs in {:.0} s",
            ratio, t.epochs, t.seconds
        ),
    )
}

/// Mean over predicted points of the distance to the closest vertex trajectory, against the
/// mean nearest-neighbour spacing of the template.
pub fn correspondence_quality(t: &Trained) -> Check {
    let preds =
        t.cohort.meshes.iter().map(|m| t.model.predict(m)).collect::<Result<Vec<_>, _>>().map_err(|e| e.to_string())?;
    let m = preds[0].points.nrows();
    let k = t.cohort.meshes[0].num_vertices();
    let n = t.cohort.len() as f64;
    let verts: Vec<_> = t.cohort.meshes.iter().map(|mesh| mesh.vertex_matrix()).collect();
    let mut total = 0.0;
    for p in 0..m {
        let mut best = f64::INFINITY;
        for j in 0..k {
            let s: f64 = preds.iter().zip(&verts).map(|(pr, v)| dist(pr.points.row(p), v.row(j))).sum();
            best = best.min(s / n);
        }
        total += best;
    }
    let traj = total / m as f64;
    let tp = &t.model.template.points;
    let mut spacing = 0.0;
    for a in 0..tp.nrows() {
        spacing +=
            (0..tp.nrows()).filter(|&b| b != a).map(|b| dist(tp.row(a), tp.row(b))).fold(f64::INFINITY, f64::min);
    }
    let spacing = spacing / tp.nrows() as f64;
    ensure(traj < spacing, format!("trajectory distance {traj:.4} vs point spacing {spacing:.4}"))
}

/// Spearman between sample uncertainty and Chamfer on a cohort with per-subject noise levels.
pub fn uncertainty_calibration(t: &Trained) -> Check {
    let spec = CohortSpec { noise_sigma_range: Some((0.0, 0.05)), n_shapes: 20, seed: 7, ..Default::default() };
    let (noisy, _) = generate_cohort::<f64>(&spec).map_err(|e| e.to_string())?;
    let t0 = Instant::now();
    let (mut unc, mut err) = (Vec::new(), Vec::new());
    for mesh in &noisy.meshes {
        let (mean, umap) = estimate_uncertainty(&t.model, mesh, UNCERTAINTY_SAMPLES, 1).map_err(|e| e.to_string())?;
        unc.push(umap.sample_scalar);
        err.push(chamfer_distance(&mesh.vertex_matrix(), &mean.points, ChamferNorm::L2).map_err(|e| e.to_string())?);
    }
    let c = correlate(&unc, &err).map_err(|e| e.to_string())?;
    let rho = c.spearman;
    ensure(
        rho.coefficient > 0.0 && rho.p_value < SIGNIFICANCE,
        format!(
            "Spearman {:.3} (p = {:.2e}) over {} subjects, S = {UNCERTAINTY_SAMPLES}, {:.0} s",
            rho.coefficient,
            rho.p_value,
            noisy.len(),
            t0.elapsed().as_secs_f64()
        ),
    )
}

fn two_class_matrix(
    t: &Trained,
    a: (f64, f64),
    b: (f64, f64),
    per_class: usize,
    seed: u64,
) -> Result<(CorrespondenceMatrix<f64>, Vec<String>), String> {
    let mut sets = Vec::new();
    let mut labels = Vec::new();
    for (c, range) in [a, b].into_iter().enumerate() {
        let spec = CohortSpec {
            n_shapes: per_class,
            factor_ranges: FactorRanges { scale_x: range, ..CohortSpec::default().factor_ranges },
            seed: seed + c as u64,
            ..Default::default()
        };
        let (cohort, _) = generate_cohort::<f64>(&spec).map_err(|e| e.to_string())?;
        for mesh in &cohort.meshes {
            sets.push(t.model.predict(mesh).map_err(|e| e.to_string())?);
            labels.push(format!("class_{c}"));
        }
    }
    Ok((CorrespondenceMatrix::from_sets(&sets).map_err(|e| e.to_string())?, labels))
}

pub fn classification(t: &Trained) -> Check {
    let cfg = ClassifierConfig::default();
    let (x, y) = two_class_matrix(t, (0.8, 0.95), (1.05, 1.2), 20, 101)?;
    let disjoint = classify_correspondences(&x, &y, None, &cfg).map_err(|e| e.to_string())?;
    let (x, y) = two_class_matrix(t, (0.8, 1.05), (0.95, 1.2), 30, 201)?;
    let overlap = classify_correspondences(&x, &y, None, &cfg).map_err(|e| e.to_string())?;
    let n = y.len() as u64;
    // one-sided binomial tail P(X >= correct) under chance accuracy 1/2
    let chance = Binomial::new(0.5, n).map_err(|e| e.to_string())?;
    let p = if overlap.correct == 0 { 1.0 } else { chance.sf(overlap.correct as u64 - 1) };
    ensure(
        disjoint.accuracy.mean == 1.0 && p < CLASSIFY_ALPHA,
        format!(
            "disjoint {}-fold accuracy {:.2}, overlapping accuracy {:.3} ({}/{n}, binomial p = {p:.2e})",
            cfg.folds, disjoint.accuracy.mean, overlap.accuracy.mean, overlap.correct
        ),
    )
}

fn cosine(a: &ndarray::Array1<f64>, b: &ndarray::Array1<f64>) -> f64 {
    a.dot(b) / (a.dot(a) * b.dot(b)).sqrt()
}

fn flat(points: &ndarray::Array2<f64>) -> ndarray::Array1<f64> {
    points.iter().copied().collect()
}

/// Test Chamfer against twice the training Chamfer.
pub fn generalization_probe(t: &Trained) -> Check {
    let mean_cd = |split: Split| -> Result<f64, String> {
        let meshes = t.cohort.split_meshes(split);
        let mut total = 0.0;
        for mesh in &meshes {
            let pred = t.model.predict(mesh).map_err(|e| e.to_string())?;
            total +=
                chamfer_distance(&mesh.vertex_matrix(), &pred.points, ChamferNorm::L2).map_err(|e| e.to_string())?;
        }
        Ok(total / meshes.len() as f64)
    };
    let (train, test) = (mean_cd(Split::Train)?, mean_cd(Split::Test)?);
    ensure(test < 2.0 * train, format!("test chamfer {test:.3e} vs training {train:.3e}"))
}

/// Stretching x by the same ratio moves the posterior mean in a consistent direction.
pub fn posterior_direction_probe(t: &Trained) -> Check {
    let mut deltas = Vec::new();
    for mesh in t.cohort.meshes.iter().take(10) {
        let stretched: Vec<[f64; 3]> = mesh.vertices.iter().map(|v| [v[0] * 1.08, v[1], v[2]]).collect();
        let other = ssmkit_core::mesh::SurfaceMesh::new(stretched, mesh.faces.clone(), "stretched")
            .map_err(|e| e.to_string())?;
        let a = t.model.posterior(mesh).map_err(|e| e.to_string())?.mu;
        let b = t.model.posterior(&other).map_err(|e| e.to_string())?.mu;
        deltas.push(&b - &a);
    }
    let mut total = 0.0;
    let mut pairs = 0;
    for i in 0..deltas.len() {
        for j in i + 1..deltas.len() {
            total += cosine(&deltas[i], &deltas[j]);
            pairs += 1;
        }
    }
    let mean = total / pairs as f64;
    ensure(mean > 0.9, format!("mean pairwise cosine of posterior shifts {mean:.3} over {} subjects", deltas.len()))
}

/// Angle between the first latent-space and data-space mode walks on a cohort varying in one factor.
pub fn mode_alignment_probe(t: &Trained) -> Check {
    let spec = CohortSpec {
        n_shapes: 20,
        factor_ranges: FactorRanges {
            scale_x: (0.8, 1.2),
            scale_y: (1.0, 1.0),
            scale_z: (1.0, 1.0),
            exponent: (1.0, 1.0),
        },
        seed: 31,
        ..Default::default()
    };
    let (cohort, _) = generate_cohort::<f64>(&spec).map_err(|e| e.to_string())?;
    let preds =
        cohort.meshes.iter().map(|m| t.model.predict(m)).collect::<Result<Vec<_>, _>>().map_err(|e| e.to_string())?;
    let pca =
        fit_pca(&CorrespondenceMatrix::from_sets(&preds).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let data = ssmkit_core::analysis::modes_of_variation(&pca, 1, &[-1.0, 1.0]).map_err(|e| e.to_string())?;
    let latent = ssmkit_core::analysis::latent_modes(&t.model, &cohort, 1, &[-1.0, 1.0]).map_err(|e| e.to_string())?;
    let d_data = flat(&data[1].points) - flat(&data[0].points);
    let d_latent = flat(&latent[1].points) - flat(&latent[0].points);
    let angle = cosine(&d_data, &d_latent).abs().min(1.0).acos().to_degrees();
    ensure(angle < 30.0, format!("principal angle {angle:.1} degrees"))
}
