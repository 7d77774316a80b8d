//! Population statistics on correspondences: modes of variation, pointwise group
//! differences, LDA shape scores and a cross-validated classifier.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use serde::Serialize;

use crate::deformer::CorrespondenceSet;
use crate::mesh::Cohort;
use crate::metrics::{fit_pca, unflatten, CorrespondenceMatrix, PcaModel};
use crate::nn::{Activation, Adam, Mlp, Parameters};
use crate::random::{derive_seed, rng_from_seed};
use crate::synthetic::Group;
use crate::training::ShapeModel;
use crate::{Error, Result, Scalar};

/// Shapes `mean + step · √λ_mode · u_mode` for each step; `mode` is 1-based.
pub fn modes_of_variation<T: Scalar>(
    pca: &PcaModel<T>,
    mode: usize,
    steps: &[f64],
) -> Result<Vec<CorrespondenceSet<T>>> {
    if mode == 0 || mode > pca.rank() {
        return Err(Error::invalid(format!("modes_of_variation: mode must be in 1..={}, got {mode}", pca.rank())));
    }
    let sd = pca.eigenvalues[mode - 1].sqrt();
    let dir = pca.modes.column(mode - 1);
    Ok(steps
        .iter()
        .map(|&st| {
            let mut x = pca.mean.clone();
            if st != 0.0 {
                x.scaled_add(T::lit(st) * sd, &dir);
            }
            CorrespondenceSet { points: unflatten(&x), subject_id: format!("mode{mode}_{st}"), projected: false }
        })
        .collect())
}

/// Posterior means of every cohort mesh, one row per subject.
pub fn posterior_means<T: Scalar>(model: &ShapeModel<T>, cohort: &Cohort<T>) -> Result<Array2<T>> {
    let mut z = Array2::zeros((cohort.len(), model.latent_dim()));
    for (i, mesh) in cohort.meshes.iter().enumerate() {
        z.row_mut(i).assign(&model.posterior(mesh)?.mu);
    }
    Ok(z)
}

/// Walks a PCA mode of the posterior means and decodes each latent point on the template
/// without projection. A mode with no variance yields the decoded latent mean at every step.
pub fn latent_modes<T: Scalar>(
    model: &ShapeModel<T>,
    cohort: &Cohort<T>,
    mode: usize,
    steps: &[f64],
) -> Result<Vec<CorrespondenceSet<T>>> {
    if mode == 0 {
        return Err(Error::invalid("latent_modes: mode is 1-based"));
    }
    let z = posterior_means(model, cohort)?;
    let pca = fit_pca(&CorrespondenceMatrix { data: z })?;
    let (sd, dir) = if mode <= pca.rank() {
        (pca.eigenvalues[mode - 1].sqrt(), Some(pca.modes.column(mode - 1).to_owned()))
    } else {
        (T::zero(), None)
    };
    steps
        .iter()
        .map(|&st| {
            let mut zz = pca.mean.clone();
            if let Some(d) = &dir {
                if st != 0.0 {
                    zz.scaled_add(T::lit(st) * sd, d);
                }
            }
            Ok(CorrespondenceSet {
                points: model.decode(&zz)?,
                subject_id: format!("latent_mode{mode}_{st}"),
                projected: false,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupDifferenceResult<T> {
    /// Control mean minus pathology mean, `M × 3`.
    pub mean_diff: Array2<T>,
    pub t2: Array1<T>,
    pub p_values: Array1<f64>,
    /// Benjamini–Hochberg adjusted p-values.
    pub adjusted: Array1<f64>,
    pub significant: Vec<bool>,
    /// Points whose pooled covariance needed the ridge fallback.
    pub regularized: Vec<bool>,
}

/// Per-point sufficient statistics of one group.
struct GroupSums<T> {
    n: usize,
    sum: Vec<[T; 3]>,
    /// upper triangle `xx, xy, xz, yy, yz, zz`
    outer: Vec<[T; 6]>,
}

fn group_sums<T: Scalar>(data: &Array2<T>, members: &[usize], m: usize) -> GroupSums<T> {
    let mut sum = vec![[T::zero(); 3]; m];
    let mut outer = vec![[T::zero(); 6]; m];
    for &i in members {
        let row = data.row(i);
        for p in 0..m {
            let (x, y, z) = (row[3 * p], row[3 * p + 1], row[3 * p + 2]);
            let s = &mut sum[p];
            s[0] += x;
            s[1] += y;
            s[2] += z;
            let o = &mut outer[p];
            o[0] += x * x;
            o[1] += x * y;
            o[2] += x * z;
            o[3] += y * y;
            o[4] += y * z;
            o[5] += z * z;
        }
    }
    GroupSums { n: members.len(), sum, outer }
}

fn inverse_quadratic<T: Scalar>(c: [T; 6], d: [T; 3]) -> Option<T> {
    let [a, b, cc, e, f, i] = c;
    // symmetric [[a b cc] [b e f] [cc f i]]
    let co00 = e * i - f * f;
    let co01 = cc * f - b * i;
    let co02 = b * f - cc * e;
    let det = a * co00 + b * co01 + cc * co02;
    let scale = (a.abs() + e.abs() + i.abs()).max(T::min_positive_value());
    if !(det > T::epsilon() * T::lit(1e3) * scale * scale * scale) {
        return None;
    }
    let co11 = a * i - cc * cc;
    let co12 = b * cc - a * f;
    let co22 = a * e - b * b;
    let q = d[0] * d[0] * co00
        + d[1] * d[1] * co11
        + d[2] * d[2] * co22
        + T::lit(2.0) * (d[0] * d[1] * co01 + d[0] * d[2] * co02 + d[1] * d[2] * co12);
    Some(q / det)
}

/// Pointwise two-sample Hotelling T² with pooled covariance; returns the statistics and
/// the ridge flags.
fn hotelling<T: Scalar>(g1: &GroupSums<T>, g2: &GroupSums<T>) -> (Vec<T>, Vec<bool>) {
    let m = g1.sum.len();
    let n1 = T::from_usize_lossy(g1.n);
    let n2 = T::from_usize_lossy(g2.n);
    let dof = T::from_usize_lossy(g1.n + g2.n - 2);
    let factor = n1 * n2 / (n1 + n2);
    let mut t2 = Vec::with_capacity(m);
    let mut reg = Vec::with_capacity(m);
    for p in 0..m {
        let m1 = [g1.sum[p][0] / n1, g1.sum[p][1] / n1, g1.sum[p][2] / n1];
        let m2 = [g2.sum[p][0] / n2, g2.sum[p][1] / n2, g2.sum[p][2] / n2];
        let d = [m1[0] - m2[0], m1[1] - m2[1], m1[2] - m2[2]];
        let pairs = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];
        let mut cov = [T::zero(); 6];
        for (k, &(a, b)) in pairs.iter().enumerate() {
            let s1 = g1.outer[p][k] - n1 * m1[a] * m1[b];
            let s2 = g2.outer[p][k] - n2 * m2[a] * m2[b];
            cov[k] = (s1 + s2) / dof;
        }
        if d == [T::zero(); 3] {
            t2.push(T::zero());
            reg.push(false);
            continue;
        }
        match inverse_quadratic(cov, d) {
            Some(q) => {
                t2.push(factor * q.max(T::zero()));
                reg.push(false);
            }
            None => {
                let trace = cov[0] + cov[3] + cov[5];
                let eps = (T::lit(1e-8) * trace / T::lit(3.0)).max(T::min_positive_value().sqrt());
                let mut c = cov;
                c[0] += eps;
                c[3] += eps;
                c[5] += eps;
                let q = inverse_quadratic(c, d).unwrap_or_else(|| {
                    // diagonal fallback when even the ridge is numerically singular
                    d[0] * d[0] / c[0] + d[1] * d[1] / c[3] + d[2] * d[2] / c[5]
                });
                t2.push(factor * q.max(T::zero()));
                reg.push(true);
            }
        }
    }
    (t2, reg)
}

/// Benjamini–Hochberg step-up adjusted p-values.
pub fn benjamini_hochberg(p: &[f64]) -> Vec<f64> {
    let n = p.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    let mut adjusted = vec![0.0; n];
    let mut running = 1.0f64;
    for rank in (0..n).rev() {
        let i = order[rank];
        running = running.min(p[i] * n as f64 / (rank + 1) as f64);
        // the max only undoes rounding in p·n/k
        adjusted[i] = running.max(p[i]).min(1.0);
    }
    adjusted
}

/// Pointwise Hotelling T² between control and pathology groups with permutation p-values
/// `(1 + #{T²_perm ≥ T²_obs}) / (1 + n_permutations)` and BH-FDR at rate `q`.
pub fn group_difference<T: Scalar>(
    x: &CorrespondenceMatrix<T>,
    labels: &[Group],
    n_permutations: usize,
    q: f64,
    seed: u64,
) -> Result<GroupDifferenceResult<T>> {
    let n = x.num_subjects();
    if labels.len() != n {
        return Err(Error::invalid("group_difference: one label per subject required"));
    }
    if n_permutations < 100 {
        return Err(Error::invalid("group_difference: need at least 100 permutations"));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::invalid("group_difference: q must lie in (0, 1)"));
    }
    let control: Vec<usize> = (0..n).filter(|&i| labels[i] == Group::Control).collect();
    let pathology: Vec<usize> = (0..n).filter(|&i| labels[i] == Group::Pathology).collect();
    if control.len() < 2 || pathology.len() < 2 {
        return Err(Error::invalid("group_difference: each group needs at least 2 members"));
    }
    let m = x.num_points();
    let gc = group_sums(&x.data, &control, m);
    let gp = group_sums(&x.data, &pathology, m);
    let (observed, regularized) = hotelling(&gc, &gp);
    let mut mean_diff = Array2::zeros((m, 3));
    let nc = T::from_usize_lossy(control.len());
    let np = T::from_usize_lossy(pathology.len());
    for p in 0..m {
        for c in 0..3 {
            mean_diff[[p, c]] = gc.sum[p][c] / nc - gp.sum[p][c] / np;
        }
    }

    let mut exceed = vec![0usize; m];
    let mut rng = rng_from_seed(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    for _ in 0..n_permutations {
        perm.shuffle(&mut rng);
        let (a, b) = perm.split_at(control.len());
        let (mut a, mut b) = (a.to_vec(), b.to_vec());
        a.sort_unstable();
        b.sort_unstable();
        let (t2, _) = hotelling(&group_sums(&x.data, &a, m), &group_sums(&x.data, &b, m));
        for p in 0..m {
            if t2[p] >= observed[p] {
                exceed[p] += 1;
            }
        }
    }
    let p_values: Vec<f64> = exceed.iter().map(|&e| (1 + e) as f64 / (1 + n_permutations) as f64).collect();
    let adjusted = benjamini_hochberg(&p_values);
    let significant = adjusted.iter().map(|&a| a < q).collect();
    Ok(GroupDifferenceResult {
        mean_diff,
        t2: Array1::from(observed),
        p_values: Array1::from(p_values),
        adjusted: Array1::from(adjusted),
        significant,
        regularized,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Gaussian1d {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdaResult<T> {
    /// `mean_control − mean_pathology`, length `3M`.
    pub discriminant: Array1<T>,
    pub scores: Array1<T>,
    /// Normalised scores of the pathology and control mean shapes.
    pub group_means_scores: (T, T),
    pub pathology_fit: Gaussian1d,
    pub control_fit: Gaussian1d,
    raw_pathology: T,
    raw_span: T,
}

impl<T: Scalar> LdaResult<T> {
    /// Normalised score of any flattened shape.
    pub fn score(&self, x: ndarray::ArrayView1<T>) -> T {
        let raw = x.dot(&self.discriminant);
        -T::one() + T::lit(2.0) * (raw - self.raw_pathology) / self.raw_span
    }
}

fn fit_gaussian(v: &[f64]) -> Gaussian1d {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    Gaussian1d { mean, std: var.sqrt() }
}

/// Scores on the mean-difference direction, affinely normalised so the pathology mean
/// shape maps to −1 and the control mean shape to +1.
pub fn lda_scores<T: Scalar>(x: &CorrespondenceMatrix<T>, labels: &[Group]) -> Result<LdaResult<T>> {
    let n = x.num_subjects();
    if labels.len() != n {
        return Err(Error::invalid("lda_scores: one label per subject required"));
    }
    let control: Vec<usize> = (0..n).filter(|&i| labels[i] == Group::Control).collect();
    let pathology: Vec<usize> = (0..n).filter(|&i| labels[i] == Group::Pathology).collect();
    if control.is_empty() || pathology.is_empty() {
        return Err(Error::invalid("lda_scores: both groups must be non-empty"));
    }
    let mc = x.data.select(Axis(0), &control).mean_axis(Axis(0)).expect("non-empty");
    let mp = x.data.select(Axis(0), &pathology).mean_axis(Axis(0)).expect("non-empty");
    let d = &mc - &mp;
    if d.iter().all(|v| *v == T::zero()) {
        return Err(Error::invalid("lda_scores: identical group means give a degenerate discriminant"));
    }
    let raw_c = mc.dot(&d);
    let raw_p = mp.dot(&d);
    let span = raw_c - raw_p;
    let mut lda = LdaResult {
        discriminant: d,
        scores: Array1::zeros(n),
        group_means_scores: (T::zero(), T::zero()),
        pathology_fit: Gaussian1d { mean: 0.0, std: 0.0 },
        control_fit: Gaussian1d { mean: 0.0, std: 0.0 },
        raw_pathology: raw_p,
        raw_span: span,
    };
    lda.group_means_scores = (lda.score(mp.view()), lda.score(mc.view()));
    lda.scores = x.data.rows().into_iter().map(|r| lda.score(r)).collect();
    let pick = |idx: &[usize]| idx.iter().map(|&i| lda.scores[i].as_f64()).collect::<Vec<_>>();
    lda.pathology_fit = fit_gaussian(&pick(&pathology));
    lda.control_fit = fit_gaussian(&pick(&control));
    Ok(lda)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassifierConfig {
    pub folds: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self { folds: 5, hidden: 100, epochs: 200, learning_rate: 1e-3, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

fn mean_std(v: &[f64]) -> MeanStd {
    let g = fit_gaussian(v);
    MeanStd { mean: g.mean, std: g.std }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationReport {
    pub classes: Vec<String>,
    pub fold_accuracy: Vec<f64>,
    pub accuracy: MeanStd,
    /// Per class, in `classes` order.
    pub f1: Vec<MeanStd>,
    /// Out-of-fold prediction for every training subject.
    pub cv_predictions: Vec<usize>,
    /// Number of correct out-of-fold predictions.
    pub correct: usize,
    /// Predictions for the optional test matrix from a model fit on all training rows.
    pub test_predictions: Vec<usize>,
}

/// Single-hidden-layer ReLU classifier on standardised features.
struct Classifier<T> {
    mean: Array1<T>,
    scale: Array1<T>,
    net: Mlp<T>,
}

impl<T: Scalar> Classifier<T> {
    fn standardize(&self, x: &Array2<T>) -> Array2<T> {
        (x - &self.mean) * &self.scale
    }

    fn fit(x: &Array2<T>, y: &[usize], classes: usize, cfg: &ClassifierConfig, seed: u64) -> Self {
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let std = x.std_axis(Axis(0), T::zero());
        let scale = std.mapv(|s| if s > T::epsilon() { T::one() / s } else { T::zero() });
        let mut rng = rng_from_seed(seed);
        let net = Mlp::new(&[x.ncols(), cfg.hidden, classes], Activation::Relu, false, &mut rng);
        let mut clf = Self { mean, scale, net };
        let xs = clf.standardize(x);
        let n = T::from_usize_lossy(x.nrows());
        let mut adam = Adam::new(clf.net.num_params(), T::lit(cfg.learning_rate));
        for _ in 0..cfg.epochs {
            let (logits, cache) = clf.net.forward_cached(&xs);
            let mut d = softmax(&logits);
            for (i, &c) in y.iter().enumerate() {
                d[[i, c]] -= T::one();
            }
            d /= n;
            let mut grad = clf.net.clone();
            grad.fill_zero();
            clf.net.backward(&cache, &d, &mut grad);
            let mut p = clf.net.flatten();
            adam.step(&mut p, &grad.flatten());
            clf.net.load_flat(&p);
        }
        clf
    }

    fn predict(&self, x: &Array2<T>) -> Vec<usize> {
        let logits = self.net.forward(&self.standardize(x));
        logits
            .rows()
            .into_iter()
            .map(|r| {
                let mut best = 0;
                for c in 1..r.len() {
                    if r[c] > r[best] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }
}

fn softmax<T: Scalar>(logits: &Array2<T>) -> Array2<T> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
        row.mapv_inplace(|v| (v - mx).exp());
        let s = row.sum();
        row /= s;
    }
    out
}

/// Stratified fold assignment: each class is shuffled and dealt round-robin.
pub fn stratified_folds(labels: &[usize], folds: usize, seed: u64) -> Vec<usize> {
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut fold_of = vec![0; labels.len()];
    let mut rng = rng_from_seed(seed);
    let mut next = 0;
    for c in 0..classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            fold_of[i] = next % folds;
            next += 1;
        }
    }
    fold_of
}

/// Stratified k-fold evaluation of the fixed MLP harness on flattened correspondences.
pub fn classify_correspondences<T: Scalar>(
    x: &CorrespondenceMatrix<T>,
    labels: &[String],
    test: Option<&CorrespondenceMatrix<T>>,
    cfg: &ClassifierConfig,
) -> Result<ClassificationReport> {
    let n = x.num_subjects();
    if labels.len() != n {
        return Err(Error::invalid("classify: one label per subject required"));
    }
    if cfg.folds < 2 || cfg.hidden == 0 {
        return Err(Error::invalid("classify: need folds >= 2 and a positive hidden width"));
    }
    let mut classes: Vec<String> = labels.to_vec();
    classes.sort();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::invalid("classify: need at least two classes"));
    }
    let y: Vec<usize> = labels.iter().map(|l| classes.binary_search(l).expect("present")).collect();
    for (c, name) in classes.iter().enumerate() {
        let count = y.iter().filter(|&&v| v == c).count();
        if count < cfg.folds {
            return Err(Error::invalid(format!(
                "classify: class {name} has {count} members, fewer than {} folds",
                cfg.folds
            )));
        }
    }
    let k = classes.len();
    let fold_of = stratified_folds(&y, cfg.folds, derive_seed(cfg.seed, 1, 0));
    let mut preds = vec![0usize; n];
    let mut fold_acc = Vec::with_capacity(cfg.folds);
    let mut f1s: Vec<Vec<f64>> = vec![Vec::new(); k];
    for f in 0..cfg.folds {
        let tr: Vec<usize> = (0..n).filter(|&i| fold_of[i] != f).collect();
        let te: Vec<usize> = (0..n).filter(|&i| fold_of[i] == f).collect();
        let xtr = x.data.select(Axis(0), &tr);
        let ytr: Vec<usize> = tr.iter().map(|&i| y[i]).collect();
        let clf = Classifier::fit(&xtr, &ytr, k, cfg, derive_seed(cfg.seed, 2, f as u64));
        let p = clf.predict(&x.data.select(Axis(0), &te));
        let mut correct = 0;
        for (j, &i) in te.iter().enumerate() {
            preds[i] = p[j];
            if p[j] == y[i] {
                correct += 1;
            }
        }
        fold_acc.push(correct as f64 / te.len() as f64);
        for (c, f1) in f1s.iter_mut().enumerate() {
            let tp = te.iter().enumerate().filter(|&(j, &i)| p[j] == c && y[i] == c).count() as f64;
            let fp = te.iter().enumerate().filter(|&(j, &i)| p[j] == c && y[i] != c).count() as f64;
            let fn_ = te.iter().enumerate().filter(|&(j, &i)| p[j] != c && y[i] == c).count() as f64;
            let denom = 2.0 * tp + fp + fn_;
            f1.push(if denom > 0.0 { 2.0 * tp / denom } else { 0.0 });
        }
    }
    let test_predictions = match test {
        Some(t) => {
            if t.data.ncols() != x.data.ncols() {
                return Err(Error::invalid("classify: test matrix has a different point count"));
            }
            let clf = Classifier::fit(&x.data, &y, k, cfg, derive_seed(cfg.seed, 3, 0));
            clf.predict(&t.data)
        }
        None => Vec::new(),
    };
    let correct = (0..n).filter(|&i| preds[i] == y[i]).count();
    Ok(ClassificationReport {
        classes,
        accuracy: mean_std(&fold_acc),
        fold_accuracy: fold_acc,
        f1: f1s.iter().map(|v| mean_std(v)).collect(),
        cv_predictions: preds,
        correct,
        test_predictions,
    })
}
