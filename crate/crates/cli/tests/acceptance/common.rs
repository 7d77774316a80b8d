use ndarray::{Array2, ArrayView1};
use ssmkit_core::mesh::SurfaceMesh;
use ssmkit_core::nn::Parameters;
use ssmkit_core::random::{normal, rng_from_seed};
use ssmkit_core::synthetic::icosphere;

pub type Check = Result<String, String>;

/// Turns a condition into a check result carrying `detail` either way.
pub fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

pub fn perturb<P: Parameters<f64>>(p: &mut P, scale: f64, seed: u64) {
    let mut rng = rng_from_seed(seed);
    let mut flat = p.flatten();
    for v in &mut flat {
        *v += scale * normal::<f64, _>(&mut rng);
    }
    p.load_flat(&flat);
}

pub fn ellipsoid(level: usize, axes: [f64; 3], id: &str) -> SurfaceMesh<f64> {
    let (v, f) = icosphere(level);
    let v = v.into_iter().map(|p| [p[0] * axes[0], p[1] * axes[1], p[2] * axes[2]]).collect();
    SurfaceMesh::new(v, f, id).unwrap()
}

pub fn dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Index and distance of the nearest row of `v`, plus the runner-up distance.
pub fn nearest(c: ArrayView1<f64>, v: &Array2<f64>) -> (usize, f64, f64) {
    let mut best = (0, f64::INFINITY, f64::INFINITY);
    for (j, row) in v.rows().into_iter().enumerate() {
        let d = dist(c, row);
        if d < best.1 {
            best = (j, d, best.1);
        } else if d < best.2 {
            best.2 = d;
        }
    }
    best
}
