//! Group-difference and LDA criteria on a bumped two-group cohort.

use std::time::Instant;

use ndarray::Axis;
use rand::seq::SliceRandom;
use ssmkit_core::analysis::{group_difference, lda_scores};
use ssmkit_core::deformer::CorrespondenceSet;
use ssmkit_core::metrics::CorrespondenceMatrix;
use ssmkit_core::random::rng_from_seed;
use ssmkit_core::synthetic::{
    generate_cohort, generate_two_group_cohort, BumpSpec, CohortSpec, FactorRanges, Group, ShapeFamily,
};
use ssmkit_core::training::{train_model, ModelConfig, ShapeModel, TrainConfig};

use crate::common::{ensure, Check};

const PERMUTATIONS: usize = 1000;
const Q: f64 = 0.05;
const LOCALISATION_MIN: f64 = 0.8;
const BUMP_EPOCHS: usize = 150;
const BUMP_POINTS: usize = 128;
const SCORE_TOL: f64 = 1e-10;

pub struct BumpRun {
    pub x: CorrespondenceMatrix<f64>,
    pub groups: Vec<Group>,
    pub inside: Vec<bool>,
    pub seconds: f64,
}

fn bump_spec() -> CohortSpec {
    CohortSpec {
        family: ShapeFamily::BumpedEllipsoid,
        bump: Some(BumpSpec { center: [0.0, 0.0, 1.0], radius: 0.8, amplitude_range: (0.0, 0.3) }),
        factor_ranges: FactorRanges {
            scale_x: (0.95, 1.05),
            scale_y: (0.95, 1.05),
            scale_z: (0.95, 1.05),
            exponent: (1.0, 1.0),
        },
        subdivision: 2,
        ..Default::default()
    }
}

/// 20 controls and 20 pathology subjects, correspondences from a model trained on them.
pub fn bump_run() -> Result<BumpRun, String> {
    let spec = bump_spec();
    let (cohort, _, groups) = generate_two_group_cohort::<f64>(&spec, 20, 20).map_err(|e| e.to_string())?;
    let t0 = Instant::now();
    let model = ShapeModel::initialize(&cohort, ModelConfig { template_points: BUMP_POINTS, ..Default::default() }, 0)
        .map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        epochs: BUMP_EPOCHS,
        burn_in_epochs: BUMP_EPOCHS / 6,
        template_update_every: BUMP_EPOCHS / 6,
        ..Default::default()
    };
    let model = train_model(model, &cohort, &cfg, &mut |_| {}).map_err(|e| e.to_string())?.model;
    let preds =
        cohort.meshes.iter().map(|m| model.predict(m)).collect::<Result<Vec<_>, _>>().map_err(|e| e.to_string())?;
    let x = CorrespondenceMatrix::from_sets(&preds).map_err(|e| e.to_string())?;
    // a point belongs to the bump when its control-mean location, seen from the centre, falls inside it
    let bump = spec.bump.expect("bumped spec");
    let control: Vec<usize> = (0..groups.len()).filter(|&i| groups[i] == Group::Control).collect();
    let inside = (0..BUMP_POINTS)
        .map(|p| {
            let mut u = [0.0; 3];
            for &i in &control {
                for c in 0..3 {
                    u[c] += preds[i].points[[p, c]];
                }
            }
            let n = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
            bump.contains([u[0] / n, u[1] / n, u[2] / n])
        })
        .collect();
    Ok(BumpRun { x, groups, inside, seconds: t0.elapsed().as_secs_f64() })
}

/// Fraction of raw p < 0.05 under shuffled labels on a cohort whose only variation is iid
/// vertex noise, with every vertex as a test point.
fn calibration() -> Result<(f64, f64, usize), String> {
    let spec = CohortSpec {
        factor_ranges: FactorRanges {
            scale_x: (1.0, 1.0),
            scale_y: (1.0, 1.0),
            scale_z: (1.0, 1.0),
            exponent: (1.0, 1.0),
        },
        noise_sigma: 0.02,
        seed: 11,
        ..Default::default()
    };
    let (cohort, _) = generate_cohort::<f64>(&spec).map_err(|e| e.to_string())?;
    let sets: Vec<_> = cohort
        .meshes
        .iter()
        .map(|m| CorrespondenceSet { points: m.vertex_matrix(), subject_id: m.subject_id.clone(), projected: false })
        .collect();
    let x = CorrespondenceMatrix::from_sets(&sets).map_err(|e| e.to_string())?;
    let n = cohort.len();
    let mut labels: Vec<Group> = (0..n).map(|i| if i < n / 2 { Group::Control } else { Group::Pathology }).collect();
    labels.shuffle(&mut rng_from_seed(12));
    let res = group_difference(&x, &labels, PERMUTATIONS, Q, 13).map_err(|e| e.to_string())?;
    let points = res.p_values.len();
    let frac = res.p_values.iter().filter(|&&p| p < 0.05).count() as f64 / points as f64;
    let half_width = 1.96 * (0.05f64 * 0.95 / points as f64).sqrt();
    Ok((frac, half_width, points))
}

pub fn group_differences(run: &BumpRun) -> Check {
    let t0 = Instant::now();
    let res = group_difference(&run.x, &run.groups, PERMUTATIONS, Q, 0).map_err(|e| e.to_string())?;
    let significant = res.significant.iter().filter(|&&s| s).count();
    let inside = res.significant.iter().zip(&run.inside).filter(|&(&s, &i)| s && i).count();
    let precision = if significant == 0 { 0.0 } else { inside as f64 / significant as f64 };
    let (frac, half_width, points) = calibration()?;
    ensure(
        significant > 0 && precision >= LOCALISATION_MIN && (frac - 0.05).abs() <= half_width,
        format!(
            "{inside}/{significant} significant points inside the bump ({:.0}%, {} of {} points lie in it), shuffled-label p<0.05 fraction {frac:.4} (CI 0.05 +/- {half_width:.4}, {points} points), {:.0} s",
            100.0 * precision,
            run.inside.iter().filter(|&&i| i).count(),
            run.inside.len(),
            run.seconds + t0.elapsed().as_secs_f64()
        ),
    )
}

pub fn lda_contract(run: &BumpRun) -> Check {
    let lda = lda_scores(&run.x, &run.groups).map_err(|e| e.to_string())?;
    let rows = |g: Group| (0..run.groups.len()).filter(|&i| run.groups[i] == g).collect::<Vec<_>>();
    let mean_of = |idx: &[usize]| run.x.data.select(Axis(0), idx).mean_axis(Axis(0)).expect("non-empty group");
    let control = mean_of(&rows(Group::Control));
    let pathology = mean_of(&rows(Group::Pathology));
    let (sc, sp) = (lda.score(control.view()), lda.score(pathology.view()));
    let mid = lda.score(((&control + &pathology) / 2.0).view());
    let ends = ((sc - 1.0).abs().max((sp + 1.0).abs()), (sc + 1.0).abs().max((sp - 1.0).abs()));
    let end_err = ends.0.min(ends.1);

    let scaled = CorrespondenceMatrix { data: &run.x.data * 1.7 };
    let lda_scaled = lda_scores(&scaled, &run.groups).map_err(|e| e.to_string())?;
    let order = |s: &ndarray::Array1<f64>| {
        let mut idx: Vec<usize> = (0..s.len()).collect();
        idx.sort_by(|&a, &b| s[a].total_cmp(&s[b]).then(a.cmp(&b)));
        idx
    };
    let same_order = order(&lda.scores) == order(&lda_scaled.scores);
    ensure(
        end_err <= SCORE_TOL && mid.abs() <= SCORE_TOL && same_order,
        format!("group means at {sc:+.12} / {sp:+.12}, midpoint {mid:.1e}, ordering under 1.7x scaling preserved {same_order}"),
    )
}
