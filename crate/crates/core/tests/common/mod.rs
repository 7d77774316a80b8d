#![allow(dead_code)]

use ssmkit_core::mesh::SurfaceMesh;
use ssmkit_core::nn::Parameters;
use ssmkit_core::random::{normal, rng_from_seed};
use ssmkit_core::synthetic::icosphere;

/// Adds `scale · N(0, 1)` to every parameter.
pub fn perturb<P: Parameters<f64>>(p: &mut P, scale: f64, seed: u64) {
    let mut rng = rng_from_seed(seed);
    let mut flat = p.flatten();
    for v in &mut flat {
        *v += scale * normal::<f64, _>(&mut rng);
    }
    p.load_flat(&flat);
}

pub fn sphere(level: usize, radius: f64, id: &str) -> SurfaceMesh<f64> {
    let (v, f) = icosphere(level);
    let v = v.into_iter().map(|p| [p[0] * radius, p[1] * radius, p[2] * radius]).collect();
    SurfaceMesh::new(v, f, id).unwrap()
}

pub fn ellipsoid(level: usize, axes: [f64; 3], id: &str) -> SurfaceMesh<f64> {
    let (v, f) = icosphere(level);
    let v = v.into_iter().map(|p| [p[0] * axes[0], p[1] * axes[1], p[2] * axes[2]]).collect();
    SurfaceMesh::new(v, f, id).unwrap()
}
