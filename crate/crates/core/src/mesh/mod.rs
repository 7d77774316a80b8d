//! Mesh representation, validation, file I/O, neighborhood structure and template
//! construction.

mod graph;
mod io;
mod manifest;
mod template;

use std::collections::BTreeSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::geom::{self, Point3};
use crate::{Error, Result, Scalar};

pub use graph::{
    euclidean_neighborhood, feature_knn, geodesic_distances_from, geodesic_neighborhood, surface_neighborhood,
    Neighborhood,
};
pub use io::{load_mesh, save_mesh, MeshFormat};
pub use manifest::{load_cohort, read_manifest, write_manifest, ManifestEntry};
pub use template::{farthest_point_indices, select_medoid, subsample_template};

/// Indexed triangle mesh of one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceMesh<T> {
    pub vertices: Vec<Point3<T>>,
    pub faces: Vec<[usize; 3]>,
    pub subject_id: String,
}

impl<T: Scalar> SurfaceMesh<T> {
    /// Builds a mesh and checks index range, face degeneracy and finiteness.
    pub fn new(vertices: Vec<Point3<T>>, faces: Vec<[usize; 3]>, subject_id: impl Into<String>) -> Result<Self> {
        let mesh = Self { vertices, faces, subject_id: subject_id.into() };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, v) in self.vertices.iter().enumerate() {
            if !v.iter().all(|c| c.is_finite()) {
                return Err(Error::NonFiniteVertex { vertex: i });
            }
        }
        let count = self.vertices.len();
        for (f, face) in self.faces.iter().enumerate() {
            for &idx in face {
                if idx >= count {
                    return Err(Error::IndexOutOfRange { face: f, index: idx as i64, count });
                }
            }
            if face[0] == face[1] || face[1] == face[2] || face[0] == face[2] {
                return Err(Error::DegenerateFace { face: f });
            }
        }
        Ok(())
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    /// Undirected edges derived from the faces, each as `(low, high)`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut set = BTreeSet::new();
        for f in &self.faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                set.insert((a.min(b), a.max(b)));
            }
        }
        set.into_iter().collect()
    }

    /// Adjacency lists weighted by Euclidean edge length, neighbors in ascending order.
    pub fn adjacency(&self) -> Vec<Vec<(usize, T)>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for (a, b) in self.edges() {
            let w = geom::dist(self.vertices[a], self.vertices[b]);
            adj[a].push((b, w));
            adj[b].push((a, w));
        }
        for list in &mut adj {
            list.sort_by_key(|&(j, _)| j);
        }
        adj
    }

    pub fn mean_edge_length(&self) -> T {
        let edges = self.edges();
        if edges.is_empty() {
            return T::zero();
        }
        let total: T = edges.iter().map(|&(a, b)| geom::dist(self.vertices[a], self.vertices[b])).sum();
        total / T::from_usize_lossy(edges.len())
    }

    pub fn bounding_box(&self) -> BoundingBox<T> {
        BoundingBox::of_points(self.vertices.iter().copied())
    }

    /// Bounding-box diagonal, used as the mesh diameter throughout.
    pub fn diameter(&self) -> T {
        self.bounding_box().diagonal()
    }

    /// Vertices as a `K × 3` matrix.
    pub fn vertex_matrix(&self) -> Array2<T> {
        points_to_matrix(&self.vertices)
    }

    /// Returns a copy where new vertex `i` is old vertex `perm[i]`; faces are remapped.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.vertices.len();
        if perm.len() != n {
            return Err(Error::invalid("permutation length differs from vertex count"));
        }
        let mut inverse = vec![usize::MAX; n];
        for (new, &old) in perm.iter().enumerate() {
            if old >= n || inverse[old] != usize::MAX {
                return Err(Error::invalid("not a permutation"));
            }
            inverse[old] = new;
        }
        let vertices = perm.iter().map(|&old| self.vertices[old]).collect();
        let faces = self.faces.iter().map(|f| [inverse[f[0]], inverse[f[1]], inverse[f[2]]]).collect();
        Ok(Self { vertices, faces, subject_id: self.subject_id.clone() })
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox<T> {
    pub min: Point3<T>,
    pub max: Point3<T>,
}

impl<T: Scalar> BoundingBox<T> {
    pub fn of_points(points: impl IntoIterator<Item = Point3<T>>) -> Self {
        let mut min = [T::infinity(); 3];
        let mut max = [T::neg_infinity(); 3];
        for p in points {
            for a in 0..3 {
                min[a] = min[a].min(p[a]);
                max[a] = max[a].max(p[a]);
            }
        }
        Self { min, max }
    }

    pub fn diagonal(&self) -> T {
        if self.min[0] > self.max[0] {
            return T::zero();
        }
        geom::dist(self.min, self.max)
    }

    pub fn volume(&self) -> T {
        (0..3).map(|a| (self.max[a] - self.min[a]).max(T::zero())).fold(T::one(), |acc, e| acc * e)
    }

    /// Intersection volume divided by the smaller box volume.
    pub fn overlap_fraction(&self, other: &Self) -> T {
        let mut inter = T::one();
        for a in 0..3 {
            let lo = self.min[a].max(other.min[a]);
            let hi = self.max[a].min(other.max[a]);
            inter *= (hi - lo).max(T::zero());
        }
        let smaller = self.volume().min(other.volume());
        if smaller <= T::zero() {
            return T::zero();
        }
        inter / smaller
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// A collection of meshes, each tagged with exactly one split and an optional group label.
#[derive(Debug, Clone)]
pub struct Cohort<T> {
    pub meshes: Vec<SurfaceMesh<T>>,
    pub splits: Vec<Split>,
    pub group_labels: Vec<Option<String>>,
}

impl<T: Scalar> Cohort<T> {
    pub fn new(meshes: Vec<SurfaceMesh<T>>, splits: Vec<Split>) -> Result<Self> {
        let n = meshes.len();
        Self::with_labels(meshes, splits, vec![None; n])
    }

    pub fn with_labels(
        meshes: Vec<SurfaceMesh<T>>,
        splits: Vec<Split>,
        group_labels: Vec<Option<String>>,
    ) -> Result<Self> {
        if meshes.len() != splits.len() || meshes.len() != group_labels.len() {
            return Err(Error::invalid("cohort: every mesh needs exactly one split tag and label slot"));
        }
        Ok(Self { meshes, splits, group_labels })
    }

    /// Every mesh tagged `train`.
    pub fn all_train(meshes: Vec<SurfaceMesh<T>>) -> Self {
        let n = meshes.len();
        Self { meshes, splits: vec![Split::Train; n], group_labels: vec![None; n] }
    }

    pub fn len(&self) -> usize {
        self.meshes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meshes.is_empty()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn split_meshes(&self, split: Split) -> Vec<&SurfaceMesh<T>> {
        self.indices(split).into_iter().map(|i| &self.meshes[i]).collect()
    }

    /// Subject ids whose bounding box overlaps the template's by at most half; each is
    /// logged as a warning. Alignment itself is the caller's responsibility.
    pub fn check_alignment(&self, template: &TemplatePointCloud<T>) -> Vec<String> {
        let tbox = BoundingBox::of_points(template.point_iter());
        let half = T::lit(0.5);
        let mut poor = Vec::new();
        for mesh in &self.meshes {
            let overlap = mesh.bounding_box().overlap_fraction(&tbox);
            if overlap <= half {
                log::warn!(
                    "subject {} overlaps the template bounding box by only {:.1}%; input may not be pre-aligned",
                    mesh.subject_id,
                    overlap.as_f64() * 100.0
                );
                poor.push(mesh.subject_id.clone());
            }
        }
        poor
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateProvenance {
    MedoidSubsample,
    DataInformed,
}

/// The shared point cloud deformed into every subject; its row order defines correspondence.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplatePointCloud<T> {
    /// `M × 3`
    pub points: Array2<T>,
    pub provenance: TemplateProvenance,
}

impl<T: Scalar> TemplatePointCloud<T> {
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn point_iter(&self) -> impl Iterator<Item = Point3<T>> + '_ {
        self.points.rows().into_iter().map(|r| [r[0], r[1], r[2]])
    }

    pub fn bounding_box(&self) -> BoundingBox<T> {
        BoundingBox::of_points(self.point_iter())
    }
}

pub fn points_to_matrix<T: Scalar>(points: &[Point3<T>]) -> Array2<T> {
    let mut m = Array2::zeros((points.len(), 3));
    for (i, p) in points.iter().enumerate() {
        m[[i, 0]] = p[0];
        m[[i, 1]] = p[1];
        m[[i, 2]] = p[2];
    }
    m
}

pub fn matrix_to_points<T: Scalar>(m: &Array2<T>) -> Vec<Point3<T>> {
    m.rows().into_iter().map(|r| [r[0], r[1], r[2]]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri() -> SurfaceMesh<f64> {
        SurfaceMesh::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], vec![[0, 1, 2]], "t").unwrap()
    }

    #[test]
    fn validation_rejects_bad_faces() {
        let v = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        assert!(matches!(
            SurfaceMesh::new(v.clone(), vec![[0, 1, 7]], "a"),
            Err(Error::IndexOutOfRange { face: 0, index: 7, count: 3 })
        ));
        assert!(matches!(SurfaceMesh::new(v.clone(), vec![[0, 1, 1]], "a"), Err(Error::DegenerateFace { face: 0 })));
        let mut bad = v;
        bad[2][1] = f64::NAN;
        assert!(matches!(SurfaceMesh::new(bad, vec![[0, 1, 2]], "a"), Err(Error::NonFiniteVertex { vertex: 2 })));
    }

    #[test]
    fn edges_from_faces() {
        let m = tri();
        assert_eq!(m.edges(), vec![(0, 1), (0, 2), (1, 2)]);
        let adj = m.adjacency();
        assert_eq!(adj[0].iter().map(|e| e.0).collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn permutation_preserves_geometry() {
        let m = tri();
        let p = m.permuted(&[2, 0, 1]).unwrap();
        assert_eq!(p.vertices[0], m.vertices[2]);
        for (fa, fb) in m.faces.iter().zip(&p.faces) {
            for k in 0..3 {
                assert_eq!(m.vertices[fa[k]], p.vertices[fb[k]]);
            }
        }
    }

    #[test]
    fn overlap_fraction() {
        let a = BoundingBox { min: [0.0f64; 3], max: [1.0; 3] };
        let b = BoundingBox { min: [0.5, 0.0, 0.0], max: [1.5, 1.0, 1.0] };
        assert!((a.overlap_fraction(&b) - 0.5).abs() < 1e-15);
    }
}
