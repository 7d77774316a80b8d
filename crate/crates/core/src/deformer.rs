//! Template deformation decoder, softmin surface projection and the Chamfer distance.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::mesh::{SurfaceMesh, TemplatePointCloud};
use crate::nn::{Activation, Mlp, MlpCache, Parameters};
use crate::{Error, Result, Scalar};

/// Predicted points for one subject; row `m` corresponds to template point `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet<T> {
    /// `M × 3`
    pub points: Array2<T>,
    pub subject_id: String,
    pub projected: bool,
}

impl<T: Scalar> CorrespondenceSet<T> {
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    /// Row-major flattening `[x0, y0, z0, x1, ...]`.
    pub fn flattened(&self) -> Array1<T> {
        Array1::from_iter(self.points.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeformerConfig {
    pub hidden: Vec<usize>,
    pub leaky_slope: f64,
}

impl Default for DeformerConfig {
    fn default() -> Self {
        Self { hidden: vec![128, 128, 128], leaky_slope: 0.02 }
    }
}

/// Shared coordinate network `f(t, z) = t + MLP([t, z])`, applied to every template point.
#[derive(Debug, Clone, PartialEq)]
pub struct Deformer<T> {
    pub net: Mlp<T>,
    pub latent_dim: usize,
}

pub struct DeformerCache<T> {
    net: MlpCache<T>,
}

impl<T: Scalar> Deformer<T> {
    /// The output layer starts at zero, so a fresh deformer returns the template unchanged.
    pub fn new<R: Rng + ?Sized>(config: &DeformerConfig, latent_dim: usize, rng: &mut R) -> Result<Self> {
        if config.hidden.is_empty() || config.hidden.contains(&0) {
            return Err(Error::invalid("deformer: hidden widths must be non-empty and positive"));
        }
        let mut sizes = vec![3 + latent_dim];
        sizes.extend_from_slice(&config.hidden);
        sizes.push(3);
        let net = Mlp::new(&sizes, Activation::LeakyRelu { slope: config.leaky_slope }, true, rng);
        Ok(Self { net, latent_dim })
    }

    fn inputs(&self, template: &Array2<T>, z: &Array1<T>) -> Result<Array2<T>> {
        if z.len() != self.latent_dim {
            return Err(Error::invalid(format!("deformer: z has length {}, expected {}", z.len(), self.latent_dim)));
        }
        if !z.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("deformer: z must be finite"));
        }
        let m = template.nrows();
        let mut x = Array2::zeros((m, 3 + self.latent_dim));
        x.slice_mut(s![.., ..3]).assign(template);
        x.slice_mut(s![.., 3..]).assign(&z.broadcast((m, self.latent_dim)).expect("broadcast"));
        Ok(x)
    }

    pub fn forward(&self, template: &Array2<T>, z: &Array1<T>) -> Result<(Array2<T>, DeformerCache<T>)> {
        let x = self.inputs(template, z)?;
        let (offset, net) = self.net.forward_cached(&x);
        let out = template + &offset;
        if !out.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { stage: "deformer", layer: self.net.layers.len() });
        }
        Ok((out, DeformerCache { net }))
    }

    /// Accumulates parameter gradients and returns `dL/dz`.
    pub fn backward(&self, cache: &DeformerCache<T>, d_out: &Array2<T>, grad: &mut Deformer<T>) -> Array1<T> {
        let d_in = self.net.backward(&cache.net, d_out, &mut grad.net);
        d_in.slice(s![.., 3..]).sum_axis(Axis(0))
    }
}

impl<T: Scalar> Parameters<T> for Deformer<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &[T])) {
        self.net.visit_params(prefix, f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T])) {
        self.net.visit_params_mut(prefix, f);
    }
}

/// Maps every template point through the shared network. Output order is template order.
pub fn deform_template<T: Scalar>(
    template: &TemplatePointCloud<T>,
    z: &Array1<T>,
    deformer: &Deformer<T>,
) -> Result<CorrespondenceSet<T>> {
    let (points, _) = deformer.forward(&template.points, z)?;
    Ok(CorrespondenceSet { points, subject_id: String::new(), projected: false })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionConfig<T> {
    sigma: T,
}

impl<T: Scalar> ProjectionConfig<T> {
    pub fn new(sigma: T) -> Result<Self> {
        if !(sigma > T::zero()) || !sigma.is_finite() {
            return Err(Error::invalid(format!("projection sigma must be positive and finite, got {sigma}")));
        }
        Ok(Self { sigma })
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }
}

/// Values saved by [`project_points`] for [`project_points_backward`].
pub struct ProjectionCache<T> {
    points: Array2<T>,
    vertices: Array2<T>,
    /// `M × K` softmin weights
    weights: Array2<T>,
    /// `M × K` Euclidean distances
    distances: Array2<T>,
    projected: Array2<T>,
    sigma: T,
}

/// Softmin projection of points `c` (`M × 3`) toward vertices `v` (`K × 3`):
/// `D_ij = ‖c_i − v_j‖`, `W_i· = softmin(D_i· / σ)`, `c_i + Σ_j W_ij (v_j − c_i)`.
pub fn project_points<T: Scalar>(c: &Array2<T>, v: &Array2<T>, sigma: T) -> (Array2<T>, ProjectionCache<T>) {
    let m = c.nrows();
    let k = v.nrows();
    let mut distances = Array2::zeros((m, k));
    let mut weights = Array2::zeros((m, k));
    let mut projected = Array2::zeros((m, 3));
    for i in 0..m {
        let ci = [c[[i, 0]], c[[i, 1]], c[[i, 2]]];
        let mut dmin = T::infinity();
        for j in 0..k {
            let dx = ci[0] - v[[j, 0]];
            let dy = ci[1] - v[[j, 1]];
            let dz = ci[2] - v[[j, 2]];
            let d = (dx * dx + dy * dy + dz * dz).sqrt();
            distances[[i, j]] = d;
            dmin = dmin.min(d);
        }
        let mut total = T::zero();
        for j in 0..k {
            let w = (-(distances[[i, j]] - dmin) / sigma).exp();
            weights[[i, j]] = w;
            total += w;
        }
        // since Σ_j W_ij = 1, c_i + Σ_j W_ij (v_j − c_i) = Σ_j W_ij v_j
        let mut acc = [T::zero(); 3];
        for j in 0..k {
            let w = weights[[i, j]] / total;
            weights[[i, j]] = w;
            for a in 0..3 {
                acc[a] += w * v[[j, a]];
            }
        }
        for a in 0..3 {
            projected[[i, a]] = acc[a];
        }
    }
    let cache = ProjectionCache {
        points: c.clone(),
        vertices: v.clone(),
        weights,
        distances,
        projected: projected.clone(),
        sigma,
    };
    (projected, cache)
}

/// Gradients of the projection w.r.t. the input points and the vertices.
pub fn project_points_backward<T: Scalar>(cache: &ProjectionCache<T>, d_proj: &Array2<T>) -> (Array2<T>, Array2<T>) {
    let m = cache.points.nrows();
    let k = cache.vertices.nrows();
    let mut d_c = Array2::zeros((m, 3));
    let mut d_v = Array2::zeros((k, 3));
    let inv_sigma = T::one() / cache.sigma;
    for i in 0..m {
        let g = [d_proj[[i, 0]], d_proj[[i, 1]], d_proj[[i, 2]]];
        let p = [cache.projected[[i, 0]], cache.projected[[i, 1]], cache.projected[[i, 2]]];
        for j in 0..k {
            let w = cache.weights[[i, j]];
            if w == T::zero() {
                continue;
            }
            let vj = [cache.vertices[[j, 0]], cache.vertices[[j, 1]], cache.vertices[[j, 2]]];
            let gv: T = (0..3).map(|a| g[a] * (vj[a] - p[a])).sum();
            let d_dist = -inv_sigma * w * gv;
            for a in 0..3 {
                d_v[[j, a]] += w * g[a];
            }
            let d = cache.distances[[i, j]];
            if d > T::zero() {
                for a in 0..3 {
                    let u = (cache.points[[i, a]] - vj[a]) / d;
                    d_c[[i, a]] += d_dist * u;
                    d_v[[j, a]] -= d_dist * u;
                }
            }
        }
    }
    (d_c, d_v)
}

/// Projects a correspondence set onto a mesh's vertices (row order preserved).
pub fn project_to_surface<T: Scalar>(
    corr: &CorrespondenceSet<T>,
    mesh: &SurfaceMesh<T>,
    cfg: &ProjectionConfig<T>,
) -> CorrespondenceSet<T> {
    let (points, _) = project_points(&corr.points, &mesh.vertex_matrix(), cfg.sigma);
    CorrespondenceSet { points, subject_id: corr.subject_id.clone(), projected: true }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChamferNorm {
    /// Euclidean nearest-neighbor distances.
    L1,
    /// Squared Euclidean nearest-neighbor distances.
    L2,
}

struct Nearest<T> {
    a_to_b: Vec<(usize, T)>,
    b_to_a: Vec<(usize, T)>,
}

fn nearest<T: Scalar>(a: &Array2<T>, b: &Array2<T>) -> Nearest<T> {
    let na = a.nrows();
    let nb = b.nrows();
    let mut a_to_b = vec![(0usize, T::infinity()); na];
    let mut b_to_a = vec![(0usize, T::infinity()); nb];
    let bs: Vec<[T; 3]> = b.rows().into_iter().map(|r| [r[0], r[1], r[2]]).collect();
    for i in 0..na {
        let ai = [a[[i, 0]], a[[i, 1]], a[[i, 2]]];
        let row = &mut a_to_b[i];
        for (j, bj) in bs.iter().enumerate() {
            let dx = ai[0] - bj[0];
            let dy = ai[1] - bj[1];
            let dz = ai[2] - bj[2];
            let d = dx * dx + dy * dy + dz * dz;
            if d < row.1 {
                *row = (j, d);
            }
            if d < b_to_a[j].1 {
                b_to_a[j] = (i, d);
            }
        }
    }
    Nearest { a_to_b, b_to_a }
}

fn check_sets<T: Scalar>(a: &Array2<T>, b: &Array2<T>) -> Result<()> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::Empty("chamfer_distance: both point sets must be non-empty".into()));
    }
    if a.ncols() != 3 || b.ncols() != 3 {
        return Err(Error::invalid("chamfer_distance: point sets must have 3 columns"));
    }
    Ok(())
}

/// Symmetric Chamfer distance: mean nearest-neighbor distance from `a` to `b` plus from
/// `b` to `a`; squared distances for [`ChamferNorm::L2`].
pub fn chamfer_distance<T: Scalar>(a: &Array2<T>, b: &Array2<T>, norm: ChamferNorm) -> Result<T> {
    check_sets(a, b)?;
    let nn = nearest(a, b);
    let term = |v: &[(usize, T)]| -> T {
        let s: T = v
            .iter()
            .map(|&(_, d)| match norm {
                ChamferNorm::L2 => d,
                ChamferNorm::L1 => d.sqrt(),
            })
            .sum();
        s / T::from_usize_lossy(v.len())
    };
    Ok(term(&nn.a_to_b) + term(&nn.b_to_a))
}

/// Chamfer distance with gradients w.r.t. both point sets.
pub fn chamfer_with_grad<T: Scalar>(
    a: &Array2<T>,
    b: &Array2<T>,
    norm: ChamferNorm,
) -> Result<(T, Array2<T>, Array2<T>)> {
    check_sets(a, b)?;
    let nn = nearest(a, b);
    let mut ga = Array2::zeros(a.dim());
    let mut gb = Array2::zeros(b.dim());
    let mut value = T::zero();
    let mut add_term = |pairs: &[(usize, T)], from_a: bool| {
        let inv = T::one() / T::from_usize_lossy(pairs.len());
        let mut s = T::zero();
        for (idx, &(other, d2)) in pairs.iter().enumerate() {
            let (ia, ib) = if from_a { (idx, other) } else { (other, idx) };
            let coef = match norm {
                ChamferNorm::L2 => {
                    s += d2;
                    T::lit(2.0) * inv
                }
                ChamferNorm::L1 => {
                    let d = d2.sqrt();
                    s += d;
                    if d > T::zero() {
                        inv / d
                    } else {
                        T::zero()
                    }
                }
            };
            for c in 0..3 {
                let diff = a[[ia, c]] - b[[ib, c]];
                ga[[ia, c]] += coef * diff;
                gb[[ib, c]] -= coef * diff;
            }
        }
        value += s * inv;
    };
    add_term(&nn.a_to_b, true);
    add_term(&nn.b_to_a, false);
    Ok((value, ga, gb))
}

/// Writes `M` lines of `x y z` in template order.
pub fn write_particles<T: Scalar>(path: &Path, points: &Array2<T>) -> Result<()> {
    let mut text = String::with_capacity(points.nrows() * 48);
    for row in points.rows() {
        writeln!(text, "{} {} {}", row[0].as_f64(), row[1].as_f64(), row[2].as_f64()).expect("write to string");
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_particles<T: Scalar>(path: &Path) -> Result<Array2<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut data = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(path, format!("line {}: {e}", n + 1)))?;
        if vals.len() != 3 {
            return Err(Error::parse(path, format!("line {}: expected 3 values", n + 1)));
        }
        data.extend(vals.into_iter().map(T::lit));
    }
    let m = data.len() / 3;
    Ok(Array2::from_shape_vec((m, 3), data).expect("three columns"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn chamfer_closed_form() {
        let a = array![[0.0, 0.0, 0.0]];
        let b = array![[1.0, 0.0, 0.0]];
        assert_eq!(chamfer_distance(&a, &b, ChamferNorm::L2).unwrap(), 2.0);
        assert_eq!(chamfer_distance(&a, &b, ChamferNorm::L1).unwrap(), 2.0);
        assert_eq!(chamfer_distance(&a, &a, ChamferNorm::L2).unwrap(), 0.0);
        let empty = Array2::<f64>::zeros((0, 3));
        assert!(matches!(chamfer_distance(&a, &empty, ChamferNorm::L2), Err(Error::Empty(_))));
    }

    #[test]
    fn single_vertex_snap_is_exact() {
        let v = array![[0.3, -1.7, 2.9]];
        let c = array![[10.0, 4.0, -3.0], [0.1, 0.2, 0.3]];
        for sigma in [1e-3, 1.0, 1e3] {
            let (p, _) = project_points(&c, &v, sigma);
            for r in p.rows() {
                assert_eq!(r.to_vec(), v.row(0).to_vec());
            }
        }
    }

    #[test]
    fn equidistant_pair_gives_midpoint() {
        let v = array![[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        let c = array![[0.0, 0.7, 0.0]];
        let (p, _) = project_points(&c, &v, 0.3);
        assert_eq!(p.row(0).to_vec(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn projection_rejects_nonpositive_sigma() {
        assert!(ProjectionConfig::new(0.0f64).is_err());
        assert!(ProjectionConfig::new(-1.0f64).is_err());
        assert!(ProjectionConfig::new(f64::NAN).is_err());
    }

    #[test]
    fn particles_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.particles");
        let pts = array![[0.1, -2.5, 3.0e-7], [1.0 / 3.0, 2.0, -0.0]];
        write_particles(&p, &pts).unwrap();
        let back: Array2<f64> = read_particles(&p).unwrap();
        assert_eq!(back, pts);
    }
}
