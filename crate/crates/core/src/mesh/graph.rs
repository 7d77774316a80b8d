//! Vertex neighborhoods: graph-geodesic (Dijkstra over face edges) and Euclidean kNN.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use ndarray::Array2;

use super::SurfaceMesh;
use crate::geom;
use crate::{Error, Result, Scalar};

/// `k` neighbor indices per vertex, stored row-major, with their distances.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood<T> {
    pub k: usize,
    pub indices: Vec<usize>,
    pub distances: Vec<T>,
}

impl<T: Scalar> Neighborhood<T> {
    pub fn num_vertices(&self) -> usize {
        if self.k == 0 {
            0
        } else {
            self.indices.len() / self.k
        }
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    pub fn row_distances(&self, i: usize) -> &[T] {
        &self.distances[i * self.k..(i + 1) * self.k]
    }

    /// Indices as a `K × k` matrix.
    pub fn to_matrix(&self) -> Array2<usize> {
        Array2::from_shape_vec((self.num_vertices(), self.k), self.indices.clone()).expect("consistent shape")
    }
}

#[derive(Clone, Copy)]
struct HeapEntry<T> {
    dist: T,
    vertex: usize,
}

impl<T: PartialOrd> PartialEq for HeapEntry<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<T: PartialOrd> Eq for HeapEntry<T> {}
impl<T: PartialOrd> PartialOrd for HeapEntry<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T: PartialOrd> Ord for HeapEntry<T> {
    // reversed so BinaryHeap pops the smallest (distance, index)
    fn cmp(&self, other: &Self) -> Ordering {
        other.dist.partial_cmp(&self.dist).unwrap_or(Ordering::Equal).then_with(|| other.vertex.cmp(&self.vertex))
    }
}

/// Dijkstra from `source`, settling vertices in (distance, index) order. Stops after
/// `limit` vertices other than the source have been settled (`None` settles everything).
/// Returns `(vertex, distance)` in settle order, source excluded.
pub fn geodesic_distances_from<T: Scalar>(
    adjacency: &[Vec<(usize, T)>],
    source: usize,
    limit: Option<usize>,
) -> Vec<(usize, T)> {
    let n = adjacency.len();
    let mut best = vec![T::infinity(); n];
    let mut settled = vec![false; n];
    let mut heap = BinaryHeap::new();
    let mut out = Vec::new();
    best[source] = T::zero();
    heap.push(HeapEntry { dist: T::zero(), vertex: source });
    while let Some(HeapEntry { dist, vertex }) = heap.pop() {
        if settled[vertex] || dist > best[vertex] {
            continue;
        }
        settled[vertex] = true;
        if vertex != source {
            out.push((vertex, dist));
            if limit.is_some_and(|l| out.len() >= l) {
                break;
            }
        }
        for &(nb, w) in &adjacency[vertex] {
            let cand = dist + w;
            if !settled[nb] && cand < best[nb] {
                best[nb] = cand;
                heap.push(HeapEntry { dist: cand, vertex: nb });
            }
        }
    }
    out
}

fn component_sizes(adjacency: &[Vec<(usize, impl Copy)>]) -> Vec<usize> {
    let n = adjacency.len();
    let mut seen = vec![false; n];
    let mut sizes = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        let mut stack = vec![start];
        seen[start] = true;
        let mut size = 0;
        while let Some(v) = stack.pop() {
            size += 1;
            for &(nb, _) in &adjacency[v] {
                if !seen[nb] {
                    seen[nb] = true;
                    stack.push(nb);
                }
            }
        }
        sizes.push(size);
    }
    sizes
}

/// The `k` nearest vertices of every vertex under graph-geodesic distance (shortest paths
/// over face edges weighted by Euclidean length), self excluded, ties by index.
pub fn geodesic_neighborhood<T: Scalar>(mesh: &SurfaceMesh<T>, k: usize) -> Result<Neighborhood<T>> {
    let n = mesh.num_vertices();
    if k == 0 || k >= n {
        return Err(Error::invalid(format!("geodesic_neighborhood: need 0 < k < K, got k={k}, K={n}")));
    }
    let adjacency = mesh.adjacency();
    let sizes = component_sizes(&adjacency);
    if sizes.len() > 1 {
        return Err(Error::Disconnected { sizes });
    }
    let mut indices = Vec::with_capacity(n * k);
    let mut distances = Vec::with_capacity(n * k);
    for v in 0..n {
        for (nb, d) in geodesic_distances_from(&adjacency, v, Some(k)) {
            indices.push(nb);
            distances.push(d);
        }
    }
    Ok(Neighborhood { k, indices, distances })
}

/// Geodesic neighborhood that tolerates disconnected meshes (e.g. after vertex masking):
/// vertices whose component holds fewer than `k` others are topped up with their nearest
/// Euclidean vertices not already selected.
pub fn surface_neighborhood<T: Scalar>(mesh: &SurfaceMesh<T>, k: usize) -> Result<Neighborhood<T>> {
    let n = mesh.num_vertices();
    if k == 0 || k >= n {
        return Err(Error::invalid(format!("surface_neighborhood: need 0 < k < K, got k={k}, K={n}")));
    }
    let adjacency = mesh.adjacency();
    let mut indices = Vec::with_capacity(n * k);
    let mut distances = Vec::with_capacity(n * k);
    for v in 0..n {
        let mut row = geodesic_distances_from(&adjacency, v, Some(k));
        if row.len() < k {
            let mut chosen = vec![false; n];
            chosen[v] = true;
            for &(j, _) in &row {
                chosen[j] = true;
            }
            let mut rest: Vec<(T, usize)> =
                (0..n).filter(|&j| !chosen[j]).map(|j| (geom::dist(mesh.vertices[v], mesh.vertices[j]), j)).collect();
            rest.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
            row.extend(rest.into_iter().take(k - row.len()).map(|(d, j)| (j, d)));
        }
        for (nb, d) in row {
            indices.push(nb);
            distances.push(d);
        }
    }
    Ok(Neighborhood { k, indices, distances })
}

/// Euclidean kNN over vertex positions.
pub fn euclidean_neighborhood<T: Scalar>(mesh: &SurfaceMesh<T>, k: usize) -> Result<Neighborhood<T>> {
    let n = mesh.num_vertices();
    if k == 0 || k >= n {
        return Err(Error::invalid(format!("euclidean_neighborhood: need 0 < k < K, got k={k}, K={n}")));
    }
    Ok(feature_knn(&mesh.vertex_matrix(), k))
}

/// kNN between the rows of a feature matrix (self excluded, ties by index), using squared
/// distances from the Gram matrix.
pub fn feature_knn<T: Scalar>(features: &Array2<T>, k: usize) -> Neighborhood<T> {
    let n = features.nrows();
    let k = k.min(n.saturating_sub(1));
    let gram = features.dot(&features.t());
    let sq: Vec<T> = (0..n).map(|i| gram[[i, i]]).collect();
    let mut indices = Vec::with_capacity(n * k);
    let mut distances = Vec::with_capacity(n * k);
    let mut row: Vec<(T, usize)> = Vec::with_capacity(n);
    let cmp = |a: &(T, usize), b: &(T, usize)| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1));
    for i in 0..n {
        row.clear();
        for j in 0..n {
            if j != i {
                let d = (sq[i] + sq[j] - T::lit(2.0) * gram[[i, j]]).max(T::zero());
                row.push((d, j));
            }
        }
        if k < row.len() {
            row.select_nth_unstable_by(k, cmp);
            row.truncate(k);
        }
        row.sort_by(cmp);
        for &(d, j) in row.iter() {
            indices.push(j);
            distances.push(d.sqrt());
        }
    }
    Neighborhood { k, indices, distances }
}
