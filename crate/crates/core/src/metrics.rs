//! Surface distances, warp-based surface reconstruction and the PCA-based SSM metrics
//! (compactness, generalization, specificity).

use std::fmt::Write as _;

use ndarray::{s, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::deformer::CorrespondenceSet;
use crate::geom::{self, Point3};
use crate::linalg::{lu_solve, symmetric_eigen};
use crate::mesh::SurfaceMesh;
use crate::random::{normal, rng_from_seed};
use crate::{Error, Result, Scalar};

/// Samples drawn on each face for the surface-to-point half of [`point_to_mesh`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaceSampling {
    #[default]
    Barycenter,
    /// Regular barycentric grid with `n` subdivisions per edge (interior and boundary points).
    Grid(usize),
}

fn face_samples<T: Scalar>(mesh: &SurfaceMesh<T>, sampling: FaceSampling) -> Vec<Point3<T>> {
    let mut out = Vec::new();
    for f in &mesh.faces {
        let [a, b, c] = [mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]];
        match sampling {
            FaceSampling::Barycenter => {
                out.push(geom::scale(geom::add(geom::add(a, b), c), T::one() / T::lit(3.0)));
            }
            FaceSampling::Grid(n) => {
                let n = n.max(1);
                let inv = T::one() / T::from_usize_lossy(n);
                for i in 0..=n {
                    for j in 0..=(n - i) {
                        let u = T::from_usize_lossy(i) * inv;
                        let v = T::from_usize_lossy(j) * inv;
                        let w = T::one() - u - v;
                        out.push(geom::add(geom::add(geom::scale(a, w), geom::scale(b, u)), geom::scale(c, v)));
                    }
                }
            }
        }
    }
    out
}

/// Exact distance from `p` to the closest face of `mesh`.
pub fn point_surface_distance<T: Scalar>(p: Point3<T>, mesh: &SurfaceMesh<T>) -> T {
    let mut best = T::infinity();
    for f in &mesh.faces {
        let (a, b, c) = (mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]);
        let d = geom::dist2(p, geom::closest_point_on_triangle(p, a, b, c));
        if d < best {
            best = d;
        }
    }
    best.sqrt()
}

fn mean_surface_distance<T: Scalar>(points: impl Iterator<Item = Point3<T>>, mesh: &SurfaceMesh<T>) -> T {
    let mut total = T::zero();
    let mut n = 0usize;
    for p in points {
        total += point_surface_distance(p, mesh);
        n += 1;
    }
    total / T::from_usize_lossy(n)
}

fn rows<T: Scalar>(m: &Array2<T>) -> impl Iterator<Item = Point3<T>> + '_ {
    m.rows().into_iter().map(|r| [r[0], r[1], r[2]])
}

/// Point-to-mesh distance with one barycenter sample per face.
pub fn point_to_mesh<T: Scalar>(points: &Array2<T>, mesh: &SurfaceMesh<T>) -> Result<T> {
    point_to_mesh_with(points, mesh, FaceSampling::Barycenter)
}

/// Mean exact point-to-face distance of `points` plus mean distance from the face samples
/// to their nearest point.
pub fn point_to_mesh_with<T: Scalar>(points: &Array2<T>, mesh: &SurfaceMesh<T>, sampling: FaceSampling) -> Result<T> {
    if points.nrows() == 0 || mesh.faces.is_empty() {
        return Err(Error::Empty("point_to_mesh: need points and at least one face".into()));
    }
    let to_faces = mean_surface_distance(rows(points), mesh);
    let samples = face_samples(mesh, sampling);
    let pts: Vec<Point3<T>> = rows(points).collect();
    let mut back = T::zero();
    for s in &samples {
        let d = pts.iter().map(|&p| geom::dist2(*s, p)).fold(T::infinity(), T::min);
        back += d.sqrt();
    }
    Ok(to_faces + back / T::from_usize_lossy(samples.len()))
}

/// Average of the mean vertex-to-surface distances in both directions.
pub fn surface_to_surface<T: Scalar>(a: &SurfaceMesh<T>, b: &SurfaceMesh<T>) -> Result<T> {
    if a.faces.is_empty() || b.faces.is_empty() || a.vertices.is_empty() || b.vertices.is_empty() {
        return Err(Error::Empty("surface_to_surface: both meshes need vertices and faces".into()));
    }
    let ab = mean_surface_distance(a.vertices.iter().copied(), b);
    let ba = mean_surface_distance(b.vertices.iter().copied(), a);
    Ok((ab + ba) / T::lit(2.0))
}

/// 3-D thin-plate spline with kernel `U(r) = r` and an affine part.
#[derive(Debug, Clone)]
pub struct ThinPlateSpline<T> {
    controls: Array2<T>,
    /// `n × 3` kernel weights
    weights: Array2<T>,
    /// `4 × 3`: constant row then the linear part
    affine: Array2<T>,
}

impl<T: Scalar> ThinPlateSpline<T> {
    /// Interpolates `source[i] ↦ target[i]` exactly.
    pub fn fit(source: &Array2<T>, target: &Array2<T>) -> Result<Self> {
        let n = source.nrows();
        if n != target.nrows() || source.ncols() != 3 || target.ncols() != 3 {
            return Err(Error::invalid("tps: control sets must both be n × 3"));
        }
        if n < 4 {
            return Err(Error::Singular("tps: need at least 4 control points".into()));
        }
        let mut sys = Array2::zeros((n + 4, n + 4));
        for i in 0..n {
            for j in 0..n {
                let d = geom::dist(
                    [source[[i, 0]], source[[i, 1]], source[[i, 2]]],
                    [source[[j, 0]], source[[j, 1]], source[[j, 2]]],
                );
                sys[[i, j]] = d;
            }
            sys[[i, n]] = T::one();
            sys[[n, i]] = T::one();
            for c in 0..3 {
                sys[[i, n + 1 + c]] = source[[i, c]];
                sys[[n + 1 + c, i]] = source[[i, c]];
            }
        }
        let mut rhs = Array2::zeros((n + 4, 3));
        rhs.slice_mut(s![..n, ..]).assign(target);
        let sol = lu_solve(&sys, &rhs).map_err(|e| match e {
            Error::Singular(m) => Error::Singular(format!("tps: rank-deficient control configuration ({m})")),
            other => other,
        })?;
        Ok(Self {
            controls: source.clone(),
            weights: sol.slice(s![..n, ..]).to_owned(),
            affine: sol.slice(s![n.., ..]).to_owned(),
        })
    }

    pub fn apply(&self, p: Point3<T>) -> Point3<T> {
        let mut out = [T::zero(); 3];
        for c in 0..3 {
            out[c] = self.affine[[0, c]]
                + self.affine[[1, c]] * p[0]
                + self.affine[[2, c]] * p[1]
                + self.affine[[3, c]] * p[2];
        }
        for (i, ctrl) in self.controls.rows().into_iter().enumerate() {
            let r = geom::dist(p, [ctrl[0], ctrl[1], ctrl[2]]);
            for c in 0..3 {
                out[c] += self.weights[[i, c]] * r;
            }
        }
        out
    }
}

/// Warps `mean_mesh` with the spline taking `mean_corr` to `corr`; connectivity is kept.
pub fn reconstruct_mesh<T: Scalar>(
    corr: &CorrespondenceSet<T>,
    mean_corr: &CorrespondenceSet<T>,
    mean_mesh: &SurfaceMesh<T>,
) -> Result<SurfaceMesh<T>> {
    if corr.len() != mean_corr.len() {
        return Err(Error::invalid("reconstruct_mesh: correspondence sets differ in size"));
    }
    let tps = ThinPlateSpline::fit(&mean_corr.points, &corr.points)?;
    let vertices = mean_mesh.vertices.iter().map(|&v| tps.apply(v)).collect();
    SurfaceMesh::new(vertices, mean_mesh.faces.clone(), corr.subject_id.clone())
}

/// Population of correspondence sets; each row is one subject flattened in template order.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceMatrix<T> {
    pub data: Array2<T>,
}

impl<T: Scalar> CorrespondenceMatrix<T> {
    pub fn from_sets(sets: &[CorrespondenceSet<T>]) -> Result<Self> {
        let first = sets.first().ok_or_else(|| Error::Empty("correspondence matrix: no subjects".into()))?;
        let d = first.len() * 3;
        let mut data = Array2::zeros((sets.len(), d));
        for (i, s) in sets.iter().enumerate() {
            if s.len() * 3 != d {
                return Err(Error::invalid("correspondence matrix: subjects have different point counts"));
            }
            data.row_mut(i).assign(&s.flattened());
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("correspondence matrix: non-finite coordinates"));
        }
        Ok(Self { data })
    }

    pub fn num_subjects(&self) -> usize {
        self.data.nrows()
    }

    pub fn num_points(&self) -> usize {
        self.data.ncols() / 3
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Self { data: self.data.select(Axis(0), rows) }
    }
}

/// Unflattens a `3M` vector into `M × 3`.
pub fn unflatten<T: Scalar>(v: &Array1<T>) -> Array2<T> {
    Array2::from_shape_vec((v.len() / 3, 3), v.to_vec()).expect("length is a multiple of 3")
}

/// Mean per-point Euclidean distance between two flattened shapes.
pub fn mean_point_distance<T: Scalar>(a: ndarray::ArrayView1<T>, b: ndarray::ArrayView1<T>) -> T {
    let m = a.len() / 3;
    let mut total = T::zero();
    for i in 0..m {
        let d = (0..3).map(|c| (a[3 * i + c] - b[3 * i + c]).powi(2)).sum::<T>();
        total += d.sqrt();
    }
    total / T::from_usize_lossy(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel<T> {
    pub mean: Array1<T>,
    /// `3M × r`, orthonormal columns
    pub modes: Array2<T>,
    /// Non-increasing and positive.
    pub eigenvalues: Array1<T>,
}

impl<T: Scalar> PcaModel<T> {
    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Reconstruction of `x` from its projection on the first `m` modes.
    pub fn reconstruct(&self, x: ndarray::ArrayView1<T>, m: usize) -> Array1<T> {
        let centered = &x - &self.mean;
        let u = self.modes.slice(s![.., ..m]);
        let coeffs = u.t().dot(&centered);
        &self.mean + &u.dot(&coeffs)
    }
}

/// Mean-centred PCA with at most `min(N − 1, 3M)` modes; modes with numerically zero
/// variance are dropped.
pub fn fit_pca<T: Scalar>(x: &CorrespondenceMatrix<T>) -> Result<PcaModel<T>> {
    let n = x.data.nrows();
    let d = x.data.ncols();
    if n < 2 {
        return Err(Error::invalid(format!("fit_pca: need N >= 2 subjects, got {n}")));
    }
    let mean = x.data.mean_axis(Axis(0)).expect("n >= 2");
    let centered = &x.data - &mean;
    let denom = T::from_usize_lossy(n - 1);
    let (vals, vecs) = if d <= n {
        let cov = centered.t().dot(&centered) / denom;
        symmetric_eigen(&cov)
    } else {
        // Gram trick: eigenvectors of X Xᵀ mapped back through Xᵀ
        let gram = centered.dot(&centered.t()) / denom;
        let (vals, u) = symmetric_eigen(&gram);
        let mut modes = centered.t().dot(&u);
        for (j, mut col) in modes.axis_iter_mut(Axis(1)).enumerate() {
            let norm = col.iter().map(|v| *v * *v).sum::<T>().sqrt();
            if norm > T::zero() && vals[j] > T::zero() {
                col /= norm;
            }
        }
        (vals, modes)
    };
    let max_rank = (n - 1).min(d);
    let top = vals.iter().copied().fold(T::zero(), T::max);
    let tol = top * T::epsilon() * T::from_usize_lossy(n.max(d)) * T::lit(10.0);
    let keep: Vec<usize> = (0..vals.len()).filter(|&j| vals[j] > tol && vals[j] > T::zero()).take(max_rank).collect();
    let modes = vecs.select(Axis(1), &keep);
    let eigenvalues = vals.select(Axis(0), &keep);
    Ok(PcaModel { mean, modes, eigenvalues })
}

/// Fraction of total variance captured by the first `m` modes.
pub fn compactness<T: Scalar>(pca: &PcaModel<T>, m: usize) -> Result<T> {
    let r = pca.rank();
    if m == 0 || m > r {
        return Err(Error::invalid(format!("compactness: need 1 <= m <= r = {r}, got {m}")));
    }
    let total = pca.eigenvalues.sum();
    Ok(pca.eigenvalues.slice(s![..m]).sum() / total)
}

/// Mean per-point reconstruction error of held-out rows using the first `m` modes.
pub fn generalization<T: Scalar>(pca: &PcaModel<T>, held_out: &CorrespondenceMatrix<T>, m: usize) -> Result<T> {
    if m > pca.rank() {
        return Err(Error::invalid(format!("generalization: m = {m} exceeds rank {}", pca.rank())));
    }
    if held_out.num_subjects() == 0 {
        return Err(Error::Empty("generalization: no held-out subjects".into()));
    }
    let mut total = T::zero();
    for row in held_out.data.rows() {
        let recon = pca.reconstruct(row, m);
        total += mean_point_distance(row, recon.view());
    }
    Ok(total / T::from_usize_lossy(held_out.num_subjects()))
}

/// Mean per-point distance from model samples (first `m` modes) to their nearest
/// training row.
pub fn specificity<T: Scalar>(
    pca: &PcaModel<T>,
    train: &CorrespondenceMatrix<T>,
    m: usize,
    n_samples: usize,
    seed: u64,
) -> Result<T> {
    if m > pca.rank() {
        return Err(Error::invalid(format!("specificity: m = {m} exceeds rank {}", pca.rank())));
    }
    if n_samples == 0 || train.num_subjects() == 0 {
        return Err(Error::Empty("specificity: need samples and training rows".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut total = T::zero();
    for _ in 0..n_samples {
        let mut x = pca.mean.clone();
        for i in 0..m {
            let e: T = normal(&mut rng);
            let coef = pca.eigenvalues[i].sqrt() * e;
            x.scaled_add(coef, &pca.modes.column(i));
        }
        let nearest =
            train.data.rows().into_iter().map(|r| mean_point_distance(r, x.view())).fold(T::infinity(), T::min);
        total += nearest;
    }
    Ok(total / T::from_usize_lossy(n_samples))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SsmCurveRow {
    pub mode: usize,
    pub compactness: f64,
    pub generalization: f64,
    pub specificity: f64,
}

/// Compactness, generalization and specificity for `m = 1..=min(max_modes, r)`.
pub fn ssm_curves<T: Scalar>(
    train: &CorrespondenceMatrix<T>,
    held_out: &CorrespondenceMatrix<T>,
    max_modes: usize,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<SsmCurveRow>> {
    let pca = fit_pca(train)?;
    let upto = max_modes.min(pca.rank());
    let mut out = Vec::with_capacity(upto);
    for m in 1..=upto {
        out.push(SsmCurveRow {
            mode: m,
            compactness: compactness(&pca, m)?.as_f64(),
            generalization: generalization(&pca, held_out, m)?.as_f64(),
            specificity: specificity(&pca, train, m, n_samples, seed)?.as_f64(),
        });
    }
    Ok(out)
}

pub fn ssm_curves_csv(rows: &[SsmCurveRow]) -> String {
    let mut out = String::from("mode,compactness,generalization,specificity\n");
    for r in rows {
        writeln!(out, "{},{},{},{}", r.mode, r.compactness, r.generalization, r.specificity).expect("write to string");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn compactness_arithmetic() {
        let pca = PcaModel { mean: Array1::zeros(2), modes: Array2::eye(2), eigenvalues: array![3.0, 1.0] };
        assert_eq!(compactness(&pca, 1).unwrap(), 0.75);
        assert_eq!(compactness(&pca, 2).unwrap(), 1.0);
        assert!(compactness(&pca, 3).is_err());
    }

    #[test]
    fn identical_rows_have_no_modes() {
        let x = CorrespondenceMatrix { data: Array2::from_elem((4, 6), 0.5) };
        let pca = fit_pca(&x).unwrap();
        assert_eq!(pca.rank(), 0);
    }
}
