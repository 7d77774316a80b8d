use ndarray::Axis;
use serde::Serialize;
use ssmkit_core::analysis::{
    classify_correspondences, group_difference, latent_modes, lda_scores, modes_of_variation, ClassifierConfig,
    Gaussian1d,
};
use ssmkit_core::deformer::CorrespondenceSet;
use ssmkit_core::mesh::{Cohort, Split};
use ssmkit_core::metrics::{compactness, fit_pca, CorrespondenceMatrix};
use ssmkit_core::synthetic::Group;
use ssmkit_core::training::ShapeModel;

use crate::error::{CliError, CliResult};
use crate::output::{gather_correspondences, load_manifest_cohort, load_model, num, RunDir, Table};
use crate::svg::{histogram, point_map};
use crate::{ClassifyArgs, GroupDiffArgs, LdaArgs, ModesArgs, Source, Space};

struct Loaded {
    cohort: Cohort<f64>,
    model: Option<ShapeModel<f64>>,
    sets: Vec<CorrespondenceSet<f64>>,
    dir: RunDir,
}

fn load<A: Serialize>(source: &Source, command: &str, args: &A) -> CliResult<Loaded> {
    let model = source.model.as_deref().map(load_model).transpose()?;
    let cohort = load_manifest_cohort(&source.manifest)?;
    let sets = gather_correspondences(&cohort, model.as_ref(), source.particles.as_deref())?;
    let dir = RunDir::create(&source.out)?;
    super::snapshot(&dir, command, args, &model.as_ref().map(|m| &m.config))?;
    Ok(Loaded { cohort, model, sets, dir })
}

fn labels(cohort: &Cohort<f64>) -> CliResult<Vec<String>> {
    cohort
        .meshes
        .iter()
        .zip(&cohort.group_labels)
        .map(|(m, l)| l.clone().ok_or_else(|| CliError::Usage(format!("subject {} has no group_label", m.subject_id))))
        .collect()
}

fn groups(cohort: &Cohort<f64>) -> CliResult<Vec<Group>> {
    labels(cohort)?
        .iter()
        .zip(&cohort.meshes)
        .map(|(l, m)| match l.to_ascii_lowercase().as_str() {
            "control" => Ok(Group::Control),
            "pathology" => Ok(Group::Pathology),
            other => Err(CliError::Usage(format!(
                "subject {}: group_label must be control or pathology, got {other}",
                m.subject_id
            ))),
        })
        .collect()
}

fn rows(points: &ndarray::Array2<f64>) -> Vec<[f64; 3]> {
    points.rows().into_iter().map(|r| [r[0], r[1], r[2]]).collect()
}

pub fn modes(a: &ModesArgs) -> CliResult<()> {
    let Loaded { cohort, model, sets, dir } = load(&a.source, "analyze modes", a)?;
    let walk = match a.space {
        Space::Data => {
            let pca = fit_pca(&CorrespondenceMatrix::from_sets(&sets)?)?;
            let mut spectrum = Table::new(&["mode", "eigenvalue", "compactness"]);
            for m in 1..=pca.rank() {
                spectrum.push(vec![m.to_string(), num(pca.eigenvalues[m - 1]), num(compactness(&pca, m)?)]);
            }
            dir.write_csv("eigenvalues.csv", &spectrum)?;
            modes_of_variation(&pca, a.mode, &a.steps)?
        }
        Space::Latent => {
            let model = model.as_ref().ok_or_else(|| CliError::Usage("latent modes need --model".into()))?;
            latent_modes(model, &cohort, a.mode, &a.steps)?
        }
    };
    let mut table = Table::new(&["step", "point", "x", "y", "z"]);
    let part_dir = dir.subdir("particles")?;
    for (k, (step, set)) in a.steps.iter().zip(&walk).enumerate() {
        for (m, r) in set.points.rows().into_iter().enumerate() {
            table.push(vec![num(*step), m.to_string(), num(r[0]), num(r[1]), num(r[2])]);
        }
        ssmkit_core::deformer::write_particles(
            &part_dir.join(format!("mode{}_step{k:02}.particles", a.mode)),
            &set.points,
        )?;
    }
    dir.write_csv("modes.csv", &table)?;
    if let (Some(first), Some(last)) = (walk.first(), walk.last()) {
        let centre = &walk[walk.len() / 2];
        let span: Vec<f64> = (&last.points - &first.points).rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
        let title = format!("mode {} displacement", a.mode);
        dir.write("modes.svg", point_map(&title, &rows(&centre.points), &span, "distance between extreme steps"))?;
    }
    Ok(())
}

pub fn groupdiff(a: &GroupDiffArgs) -> CliResult<()> {
    let Loaded { cohort, sets, dir, .. } = load(&a.source, "analyze groupdiff", a)?;
    let labels = groups(&cohort)?;
    let x = CorrespondenceMatrix::from_sets(&sets)?;
    let res = group_difference(&x, &labels, a.permutations, a.q, a.seed)?;
    let mean = ssmkit_core::metrics::unflatten(&x.data.mean_axis(Axis(0)).expect("non-empty cohort"));
    let mut table = Table::new(&[
        "point",
        "x",
        "y",
        "z",
        "diff_x",
        "diff_y",
        "diff_z",
        "diff_norm",
        "t2",
        "p_value",
        "p_adjusted",
        "significant",
        "regularized",
    ]);
    let mut norms = Vec::with_capacity(mean.nrows());
    for m in 0..mean.nrows() {
        let d = res.mean_diff.row(m);
        let norm = d.dot(&d).sqrt();
        norms.push(norm);
        table.push(vec![
            m.to_string(),
            num(mean[[m, 0]]),
            num(mean[[m, 1]]),
            num(mean[[m, 2]]),
            num(d[0]),
            num(d[1]),
            num(d[2]),
            num(norm),
            num(res.t2[m]),
            num(res.p_values[m]),
            num(res.adjusted[m]),
            res.significant[m].to_string(),
            res.regularized[m].to_string(),
        ]);
    }
    dir.write_csv("groupdiff.csv", &table)?;
    let pts = rows(&mean);
    dir.write("groupdiff_mean_difference.svg", point_map("control - pathology", &pts, &norms, "|mean difference|"))?;
    let logp: Vec<f64> = res.p_values.iter().map(|p| -p.log10()).collect();
    dir.write("groupdiff_pvalues.svg", point_map("permutation p-values", &pts, &logp, "-log10 p"))?;

    #[derive(Serialize)]
    struct Summary {
        points: usize,
        significant: usize,
        regularized: usize,
        permutations: usize,
        q: f64,
    }
    let summary = Summary {
        points: mean.nrows(),
        significant: res.significant.iter().filter(|&&s| s).count(),
        regularized: res.regularized.iter().filter(|&&s| s).count(),
        permutations: a.permutations,
        q: a.q,
    };
    log::info!("{} of {} points significant at q = {}", summary.significant, summary.points, a.q);
    dir.write_json("groupdiff_summary.json", &summary)?;
    Ok(())
}

pub fn lda(a: &LdaArgs) -> CliResult<()> {
    let Loaded { cohort, sets, dir, .. } = load(&a.source, "analyze lda", a)?;
    if a.bins == 0 {
        return Err(CliError::Usage("--bins must be >= 1".into()));
    }
    let labels = groups(&cohort)?;
    let res = lda_scores(&CorrespondenceMatrix::from_sets(&sets)?, &labels)?;
    let mut table = Table::new(&["subject_id", "group", "score"]);
    for ((m, g), s) in cohort.meshes.iter().zip(&labels).zip(res.scores.iter()) {
        table.push(vec![m.subject_id.clone(), g.as_str().into(), num(*s)]);
    }
    dir.write_csv("lda_scores.csv", &table)?;

    let lo = res.scores.iter().cloned().fold(-1.0, f64::min);
    let hi = res.scores.iter().cloned().fold(1.0, f64::max);
    let width = (hi - lo) / a.bins as f64;
    let edges: Vec<f64> = (0..=a.bins).map(|b| lo + width * b as f64).collect();
    let mut counts = [vec![0.0; a.bins], vec![0.0; a.bins]];
    for (g, s) in labels.iter().zip(res.scores.iter()) {
        let b = (((s - lo) / width) as usize).min(a.bins - 1);
        counts[usize::from(*g == Group::Pathology)][b] += 1.0;
    }
    let mut hist = Table::new(&["bin_start", "bin_end", "control", "pathology"]);
    for b in 0..a.bins {
        hist.push(vec![num(edges[b]), num(edges[b + 1]), num(counts[0][b]), num(counts[1][b])]);
    }
    dir.write_csv("lda_histogram.csv", &hist)?;
    let [control, pathology] = counts;
    let svg =
        histogram("LDA shape score", "score", &edges, &[("control".into(), control), ("pathology".into(), pathology)]);
    dir.write("lda_histogram.svg", svg)?;

    #[derive(Serialize)]
    struct Fits {
        control: Gaussian1d,
        pathology: Gaussian1d,
    }
    dir.write_json("lda_fits.json", &Fits { control: res.control_fit, pathology: res.pathology_fit })?;
    Ok(())
}

pub fn classify(a: &ClassifyArgs) -> CliResult<()> {
    let Loaded { cohort, sets, dir, .. } = load(&a.source, "analyze classify", a)?;
    let labels = labels(&cohort)?;
    let x = CorrespondenceMatrix::from_sets(&sets)?;
    let test_rows = cohort.indices(Split::Test);
    let cv_rows: Vec<usize> = (0..cohort.len()).filter(|i| !test_rows.contains(i)).collect();
    let cfg = ClassifierConfig {
        folds: a.folds,
        hidden: a.hidden,
        epochs: a.epochs,
        learning_rate: a.learning_rate,
        seed: a.seed,
    };
    let test = (!test_rows.is_empty()).then(|| x.subset(&test_rows));
    let cv_labels: Vec<String> = cv_rows.iter().map(|&i| labels[i].clone()).collect();
    let report = classify_correspondences(&x.subset(&cv_rows), &cv_labels, test.as_ref(), &cfg)?;

    let mut folds = Table::new(&["fold", "accuracy"]);
    for (f, acc) in report.fold_accuracy.iter().enumerate() {
        folds.push(vec![f.to_string(), num(*acc)]);
    }
    dir.write_csv("classification_folds.csv", &folds)?;
    let mut classes = Table::new(&["class", "f1_mean", "f1_std"]);
    for (c, f1) in report.classes.iter().zip(&report.f1) {
        classes.push(vec![c.clone(), num(f1.mean), num(f1.std)]);
    }
    dir.write_csv("classification_classes.csv", &classes)?;
    let mut preds = Table::new(&["subject_id", "split", "label", "predicted", "evaluation"]);
    for (k, &i) in cv_rows.iter().enumerate() {
        let p = &report.classes[report.cv_predictions[k]];
        preds.push(vec![
            cohort.meshes[i].subject_id.clone(),
            cohort.splits[i].as_str().into(),
            labels[i].clone(),
            p.clone(),
            "cv".into(),
        ]);
    }
    for (k, &i) in test_rows.iter().enumerate() {
        let p = &report.classes[report.test_predictions[k]];
        preds.push(vec![
            cohort.meshes[i].subject_id.clone(),
            cohort.splits[i].as_str().into(),
            labels[i].clone(),
            p.clone(),
            "test".into(),
        ]);
    }
    dir.write_csv("classification_predictions.csv", &preds)?;
    log::info!("cross-validated accuracy {:.3} ± {:.3}", report.accuracy.mean, report.accuracy.std);
    dir.write_json("classification_summary.json", &report)?;
    Ok(())
}
