//! Sampling-based aleatoric uncertainty, uncertainty/error correlation and outlier flags.

use std::fmt::Write as _;

use ndarray::{Array1, Array2};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::deformer::CorrespondenceSet;
use crate::encoder::{reparameterize, LatentPosterior};
use crate::mesh::SurfaceMesh;
use crate::random::{normal_vec, rng_from_seed};
use crate::training::ShapeModel;
use crate::{Error, Result, Scalar};

/// Pointwise diagonal Gaussian fitted to decoded posterior samples.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMap<T> {
    /// Unbiased per-coordinate variance, `M × 3`.
    pub per_point_variance: Array2<T>,
    /// Trace of the per-point covariance divided by 3.
    pub per_point_scalar: Array1<T>,
    /// Mean of `per_point_scalar`.
    pub sample_scalar: T,
    pub samples: usize,
}

impl<T: Scalar> UncertaintyMap<T> {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("point,var_x,var_y,var_z,scalar\n");
        for (m, row) in self.per_point_variance.rows().into_iter().enumerate() {
            writeln!(out, "{m},{},{},{},{}", row[0], row[1], row[2], self.per_point_scalar[m])
                .expect("write to string");
        }
        out
    }
}

/// Decodes and projects `samples` posterior draws of `mesh` and fits the pointwise Gaussian.
pub fn estimate_uncertainty<T: Scalar>(
    model: &ShapeModel<T>,
    mesh: &SurfaceMesh<T>,
    samples: usize,
    seed: u64,
) -> Result<(CorrespondenceSet<T>, UncertaintyMap<T>)> {
    let post = model.posterior(mesh)?;
    let (mean, umap) = estimate_with(&post, samples, seed, |z| model.decode_projected(z, mesh))?;
    Ok((CorrespondenceSet { points: mean, subject_id: mesh.subject_id.clone(), projected: true }, umap))
}

/// Same estimator with an arbitrary decoder `z ↦ M × 3 points`.
pub fn estimate_with<T: Scalar, F>(
    post: &LatentPosterior<T>,
    samples: usize,
    seed: u64,
    mut decode: F,
) -> Result<(Array2<T>, UncertaintyMap<T>)>
where
    F: FnMut(&Array1<T>) -> Result<Array2<T>>,
{
    if samples < 2 {
        return Err(Error::invalid(format!("estimate_uncertainty: need S >= 2, got {samples}")));
    }
    let mut rng = rng_from_seed(seed);
    let mut mean: Option<Array2<T>> = None;
    let mut m2: Option<Array2<T>> = None;
    // Welford's update keeps memory independent of S
    for s in 0..samples {
        let eps = Array1::from(normal_vec::<T, _>(&mut rng, post.dim()));
        let c = decode(&reparameterize(post, &eps)?)?;
        let mean = mean.get_or_insert_with(|| Array2::zeros(c.dim()));
        let m2 = m2.get_or_insert_with(|| Array2::zeros(c.dim()));
        if c.dim() != mean.dim() {
            return Err(Error::invalid("estimate_uncertainty: decoder changed output shape"));
        }
        let n = T::from_usize_lossy(s + 1);
        let delta = &c - &*mean;
        *mean += &(&delta / n);
        let delta2 = &c - &*mean;
        *m2 += &(&delta * &delta2);
    }
    let mean = mean.expect("samples >= 2");
    let var = m2.expect("samples >= 2") / T::from_usize_lossy(samples - 1);
    let var = var.mapv(|v| v.max(T::zero()));
    let scalar = var.rows().into_iter().map(|r| (r[0] + r[1] + r[2]) / T::lit(3.0)).collect::<Array1<T>>();
    let sample_scalar = scalar.mean().unwrap_or_else(T::zero);
    Ok((mean, UncertaintyMap { per_point_variance: var, per_point_scalar: scalar, sample_scalar, samples }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorrelationTest {
    pub coefficient: f64,
    /// Two-sided p-value from the t distribution with `n − 2` degrees of freedom.
    pub p_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Correlation {
    pub pearson: CorrelationTest,
    pub spearman: CorrelationTest,
}

fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::invalid("correlate: input has zero variance"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

fn t_test(r: f64, n: usize) -> f64 {
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
}

/// 1-based ranks; tied values share their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn correlate(x: &[f64], y: &[f64]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(Error::invalid("correlate: inputs differ in length"));
    }
    if x.len() < 3 {
        return Err(Error::invalid("correlate: need n >= 3"));
    }
    if !x.iter().chain(y).all(|v| v.is_finite()) {
        return Err(Error::invalid("correlate: inputs must be finite"));
    }
    let n = x.len();
    let r = pearson_r(x, y)?;
    let rho = pearson_r(&average_ranks(x), &average_ranks(y))?;
    Ok(Correlation {
        pearson: CorrelationTest { coefficient: r, p_value: t_test(r, n) },
        spearman: CorrelationTest { coefficient: rho, p_value: t_test(rho, n) },
    })
}

/// The `top_k` indices with the largest `rank(uncertainty) + rank(error)`; ties go to the
/// lower index. `top_k` is clamped to `n`.
pub fn flag_outliers(uncertainty: &[f64], error: &[f64], top_k: usize) -> Vec<usize> {
    let ru = average_ranks(uncertainty);
    let re = average_ranks(error);
    let n = uncertainty.len().min(error.len());
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| (ru[b] + re[b]).total_cmp(&(ru[a] + re[a])).then(a.cmp(&b)));
    idx.truncate(top_k.min(n));
    idx
}
