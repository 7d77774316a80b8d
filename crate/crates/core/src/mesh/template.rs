use super::{points_to_matrix, Cohort, Split, SurfaceMesh, TemplatePointCloud, TemplateProvenance};
use crate::deformer::{chamfer_distance, ChamferNorm};
use crate::geom;
use crate::{Error, Result, Scalar};

/// The training mesh with the smallest summed symmetric L2 Chamfer distance (over vertex
/// sets) to all other training meshes. Ties go to the lowest subject id.
pub fn select_medoid<T: Scalar>(cohort: &Cohort<T>) -> Result<&SurfaceMesh<T>> {
    let mut train = cohort.split_meshes(Split::Train);
    if train.is_empty() {
        return Err(Error::Empty("select_medoid: cohort has no training meshes".into()));
    }
    // canonical order makes the result independent of cohort ordering
    train.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    let mats: Vec<_> = train.iter().map(|m| m.vertex_matrix()).collect();
    let n = train.len();
    let mut pair = vec![T::zero(); n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = chamfer_distance(&mats[i], &mats[j], ChamferNorm::L2)?;
            pair[i * n + j] = d;
            pair[j * n + i] = d;
        }
    }
    let mut best = 0;
    let mut best_sum = T::infinity();
    for i in 0..n {
        let s: T = (0..n).map(|j| pair[i * n + j]).sum();
        if s < best_sum {
            best_sum = s;
            best = i;
        }
    }
    Ok(train[best])
}

/// Farthest-point sampling of `m` vertices starting from vertex 0 (ties by lowest index).
pub fn subsample_template<T: Scalar>(mesh: &SurfaceMesh<T>, m: usize) -> Result<TemplatePointCloud<T>> {
    let chosen = farthest_point_indices(mesh, m)?;
    let pts: Vec<_> = chosen.iter().map(|&i| mesh.vertices[i]).collect();
    Ok(TemplatePointCloud { points: points_to_matrix(&pts), provenance: TemplateProvenance::MedoidSubsample })
}

/// Vertex indices picked by [`subsample_template`], in template order.
pub fn farthest_point_indices<T: Scalar>(mesh: &SurfaceMesh<T>, m: usize) -> Result<Vec<usize>> {
    let k = mesh.num_vertices();
    if m == 0 || m > k {
        return Err(Error::invalid(format!("subsample_template: need 1 <= m <= K, got m={m}, K={k}")));
    }
    let mut chosen = Vec::with_capacity(m);
    let mut min_d = vec![T::infinity(); k];
    let mut current = 0;
    for _ in 0..m {
        chosen.push(current);
        min_d[current] = T::neg_infinity();
        let p = mesh.vertices[current];
        let mut next = usize::MAX;
        let mut far = T::neg_infinity();
        for (j, d) in min_d.iter_mut().enumerate() {
            if *d == T::neg_infinity() {
                continue;
            }
            let dj = geom::dist2(p, mesh.vertices[j]);
            if dj < *d {
                *d = dj;
            }
            if *d > far {
                far = *d;
                next = j;
            }
        }
        current = next;
    }
    Ok(chosen)
}
