//! Property suites for the flow, projection, metrics and gradients.

use ndarray::{array, Array1, Array2};
use ssmkit_core::deformer::{
    chamfer_distance, project_points, ChamferNorm, CorrespondenceSet, DeformerConfig, ProjectionConfig,
};
use ssmkit_core::encoder::{EncoderConfig, EncoderInput, NeighborMetric};
use ssmkit_core::flow::{FlowConfig, FlowPrior};
use ssmkit_core::mesh::{SurfaceMesh, TemplatePointCloud, TemplateProvenance};
use ssmkit_core::metrics::{point_to_mesh, reconstruct_mesh, ssm_curves, surface_to_surface, CorrespondenceMatrix};
use ssmkit_core::nn::Parameters;
use ssmkit_core::random::{normal, normal_vec, rng_from_seed, uniform};
use ssmkit_core::training::{objective_on, objective_with_grad, ModelConfig, ShapeModel};

use crate::common::{ellipsoid, ensure, nearest, perturb, Check};

const ROUND_TRIP_TOL: f64 = 1e-5;
const LOGDET_TOL: f64 = 1e-4;
const MASS_TOL: f64 = 0.01;
const ARGMIN_TOL: f64 = 1e-3;
const CONTRACTION_MIN: usize = 95;
const S2S_TOL: f64 = 0.01;
const AFFINE_TOL: f64 = 1e-6;
const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;

fn random_flow(dim: usize, seed: u64) -> FlowPrior<f64> {
    let mut rng = rng_from_seed(seed);
    let cfg = FlowConfig { coupling_layers: 6, hidden_width: 16, permutation_seed: seed };
    let mut flow = FlowPrior::new(&cfg, dim, &mut rng).unwrap();
    perturb(&mut flow, 0.3, seed + 1);
    flow
}

fn numeric_logdet(flow: &FlowPrior<f64>, z: &Array1<f64>) -> f64 {
    let h = 1e-6;
    let mut j = Array2::zeros((2, 2));
    for c in 0..2 {
        let mut zp = z.clone();
        zp[c] += h;
        let mut zm = z.clone();
        zm[c] -= h;
        let d = (flow.forward(&zp).unwrap().0 - flow.forward(&zm).unwrap().0) / (2.0 * h);
        j.column_mut(c).assign(&d);
    }
    (j[[0, 0]] * j[[1, 1]] - j[[0, 1]] * j[[1, 0]]).abs().ln()
}

pub fn flow_suite() -> Check {
    let flow = random_flow(32, 5);
    let mut rng = rng_from_seed(6);
    let mut round_trip = 0.0f64;
    for _ in 0..1000 {
        let z = Array1::from(normal_vec::<f64, _>(&mut rng, 32));
        let back = flow.inverse(&flow.forward(&z).unwrap().0).unwrap();
        round_trip = round_trip.max((&back - &z).iter().fold(0.0, |m, d| m.max(d.abs())));
    }
    let mut logdet = 0.0f64;
    for seed in 0..5 {
        let flow = random_flow(2, 10 + seed);
        let mut rng = rng_from_seed(50 + seed);
        for _ in 0..10 {
            let z = Array1::from(normal_vec::<f64, _>(&mut rng, 2));
            logdet = logdet.max((flow.forward(&z).unwrap().1 - numeric_logdet(&flow, &z)).abs());
        }
    }
    // midpoint rule on [-20, 20]², far past where the perturbed flows put mass
    let flow2 = random_flow(2, 3);
    let (r, h) = (20.0, 0.1);
    let n = (2.0 * r / h) as usize;
    let mut mass = 0.0;
    for i in 0..n {
        for j in 0..n {
            let z = array![-r + (i as f64 + 0.5) * h, -r + (j as f64 + 0.5) * h];
            mass += flow2.log_prob(&z).unwrap().exp() * h * h;
        }
    }
    ensure(
        round_trip < ROUND_TRIP_TOL && logdet < LOGDET_TOL && (mass - 1.0).abs() < MASS_TOL,
        format!("round trip {round_trip:.2e}, logdet error {logdet:.2e}, grid mass {mass:.5}"),
    )
}

pub fn projection_suite() -> Check {
    let mut rng = rng_from_seed(1);
    let single = array![[0.3, -0.7, 2.0]];
    let mut snap = true;
    for sigma in [1e-3, 0.5, 10.0, 1e4] {
        let c = Array2::from_shape_fn((20, 3), |_| 5.0 * normal::<f64, _>(&mut rng));
        snap &= project_points(&c, &single, sigma).0.rows().into_iter().all(|r| r == single.row(0));
    }
    let pair: Array2<f64> = array![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]];
    let mut midpoint = 0.0f64;
    for sigma in [0.01, 1.0, 100.0] {
        let p = project_points(&array![[0.0, 0.4, -0.3], [0.0, -2.0, 1.0]], &pair, sigma).0;
        midpoint = midpoint.max(p.iter().fold(0.0, |m, v| m.max(v.abs())));
    }

    let mesh = ellipsoid(1, [1.0, 0.8, 1.2], "e");
    let v = mesh.vertex_matrix();
    let sigma = 0.01 * mesh.diameter();
    let c = Array2::from_shape_fn((300, 3), |(i, k)| v[[i % v.nrows(), k]] + uniform::<f64, _>(&mut rng, -0.15, 0.15));
    let p = project_points(&c, &v, sigma).0;
    let (mut argmin, mut checked) = (0.0f64, 0);
    for i in 0..300 {
        let (j, d1, d2) = nearest(c.row(i), &v);
        // near-ties are ambiguous for the hard snap itself
        if d2 - d1 < 8.5 * sigma {
            continue;
        }
        checked += 1;
        argmin = argmin.max(crate::common::dist(p.row(i), v.row(j)));
    }

    let mesh = ellipsoid(2, [1.0, 1.1, 0.9], "e");
    let v = mesh.vertex_matrix();
    let h = mesh.mean_edge_length();
    let mut contracted = 0;
    for _ in 0..100 {
        let c =
            Array2::from_shape_fn((40, 3), |(i, k)| v[[(i * 3) % v.nrows(), k]] + 0.3 * h * normal::<f64, _>(&mut rng));
        let p = project_points(&c, &v, 0.1 * h).0;
        let before: f64 = c.rows().into_iter().map(|r| nearest(r, &v).1).sum();
        let after: f64 = p.rows().into_iter().map(|r| nearest(r, &v).1).sum();
        if after <= before {
            contracted += 1;
        }
    }
    ensure(
        snap && midpoint < 1e-15 && checked > 150 && argmin < ARGMIN_TOL && contracted >= CONTRACTION_MIN,
        format!(
            "snap {snap}, midpoint {midpoint:.1e}, argmin error {argmin:.2e} on {checked} points, contraction {contracted}/100"
        ),
    )
}

fn brute_chamfer(a: &Array2<f64>, b: &Array2<f64>, squared: bool) -> f64 {
    let d = |p: ndarray::ArrayView1<f64>, q: ndarray::ArrayView1<f64>| {
        let s = (p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]) + (p[2] - q[2]) * (p[2] - q[2]);
        if squared {
            s
        } else {
            s.sqrt()
        }
    };
    let one_way = |x: &Array2<f64>, y: &Array2<f64>| {
        x.rows().into_iter().map(|p| y.rows().into_iter().map(|q| d(p, q)).fold(f64::INFINITY, f64::min)).sum::<f64>()
            / x.nrows() as f64
    };
    one_way(a, b) + one_way(b, a)
}

fn set(points: Array2<f64>) -> CorrespondenceSet<f64> {
    CorrespondenceSet { points, subject_id: "s".into(), projected: false }
}

pub fn metric_suite() -> Check {
    let mut rng = rng_from_seed(2);
    let mut chamfer_exact = true;
    for _ in 0..5 {
        let a = Array2::from_shape_fn((50, 3), |_| normal::<f64, _>(&mut rng));
        let b = Array2::from_shape_fn((50, 3), |_| normal::<f64, _>(&mut rng));
        chamfer_exact &= chamfer_distance(&a, &b, ChamferNorm::L2).unwrap() == brute_chamfer(&a, &b, true);
        chamfer_exact &= chamfer_distance(&a, &b, ChamferNorm::L1).unwrap() == brute_chamfer(&a, &b, false);
    }

    // one point above a unit right triangle; the face barycenter comes back
    let tri =
        SurfaceMesh::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], vec![[0, 1, 2]], "tri").unwrap();
    let p2m = point_to_mesh(&array![[0.0, 0.0, 1.0]], &tri).unwrap();
    let p2m_expect = 1.0 + (2.0f64 / 9.0 + 1.0).sqrt();
    let p2m_ok = (p2m - p2m_expect).abs() <= 4.0 * f64::EPSILON;

    let a = ellipsoid(3, [1.0; 3], "a");
    let b = ellipsoid(3, [1.1; 3], "b");
    let s2s = surface_to_surface(&a, &b).unwrap();

    let mesh = ellipsoid(2, [1.0, 0.9, 1.2], "mean");
    let controls = Array2::from_shape_fn((30, 3), |_| uniform::<f64, _>(&mut rng, -1.0, 1.0));
    let mean = set(controls.clone());
    let (c, s) = (0.6f64.cos(), 0.6f64.sin());
    let maps: Vec<(Array2<f64>, Array1<f64>)> = vec![
        (Array2::eye(3), array![0.3, -1.0, 2.5]),
        (array![[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]], array![0.0, 0.0, 0.0]),
        (Array2::eye(3) * 2.0, array![0.0, 0.0, 0.0]),
    ];
    let mut affine = 0.0f64;
    for (m, t) in maps {
        let out = reconstruct_mesh(&set(controls.dot(&m.t()) + &t), &mean, &mesh).unwrap();
        for (p, q) in out.vertices.iter().zip(&mesh.vertices) {
            let expect = m.dot(&array![q[0], q[1], q[2]]) + &t;
            affine = affine.max((0..3).map(|k| (p[k] - expect[k]).abs()).fold(0.0, f64::max));
        }
    }

    let basis = Array2::from_shape_fn((3, 24), |_| normal::<f64, _>(&mut rng));
    let draw = |rng: &mut _, n: usize| CorrespondenceMatrix {
        data: Array2::from_shape_fn((n, 3), |(_, k)| [3.0, 1.5, 0.5][k] * normal::<f64, _>(rng)).dot(&basis)
            + Array2::from_shape_fn((n, 24), |_| 0.1 * normal::<f64, _>(rng)),
    };
    let train = draw(&mut rng, 20);
    let held = draw(&mut rng, 6);
    let rows = ssm_curves(&train, &held, 30, 50, 3).unwrap();
    let monotone = rows
        .windows(2)
        .all(|w| w[1].compactness >= w[0].compactness && w[1].generalization <= w[0].generalization + 1e-12);

    ensure(
        chamfer_exact && p2m_ok && (s2s - 0.1).abs() <= S2S_TOL && affine < AFFINE_TOL && monotone,
        format!(
            "chamfer exact {chamfer_exact}, triangle P2M {p2m} vs {p2m_expect}, S2S {s2s:.5}, TPS affine error {affine:.2e}, monotone curves {monotone} over {} modes",
            rows.len()
        ),
    )
}

/// Octagonal bipyramid: 8 ring vertices plus two apices.
fn bipyramid() -> SurfaceMesh<f64> {
    let mut v = Vec::new();
    for i in 0..8 {
        let t = i as f64 * std::f64::consts::TAU / 8.0;
        v.push([t.cos() * (1.0 + 0.1 * i as f64), t.sin(), 0.05 * (i % 3) as f64]);
    }
    v.push([0.1, 0.0, 1.2]);
    v.push([0.0, -0.1, -0.9]);
    let mut f = Vec::new();
    for i in 0..8 {
        let j = (i + 1) % 8;
        f.push([i, j, 8]);
        f.push([j, i, 9]);
    }
    SurfaceMesh::new(v, f, "toy").unwrap()
}

fn toy_model() -> ShapeModel<f64> {
    let cfg = ModelConfig {
        encoder: EncoderConfig {
            k_neighbors: 3,
            edgeconv_widths: vec![5, 4],
            latent_dim: 4,
            first_block_metric: NeighborMetric::Geodesic,
            head_width: 6,
            leaky_slope: 0.2,
        },
        flow: FlowConfig { coupling_layers: 2, hidden_width: 5, permutation_seed: 3 },
        deformer: DeformerConfig { hidden: vec![6, 6], leaky_slope: 0.02 },
        template_points: 5,
        projection_sigma: Some(0.3),
        projection_sigma_edge_fraction: 0.5,
    };
    let template = TemplatePointCloud {
        points: array![[1.0, 0.1, 0.0], [-0.8, 0.3, 0.2], [0.0, 0.9, -0.1], [0.2, -0.7, 0.5], [0.1, 0.0, -0.6]],
        provenance: TemplateProvenance::MedoidSubsample,
    };
    let mut model = ShapeModel::new(cfg, template, ProjectionConfig::new(0.3).unwrap(), 5).unwrap();
    // zero-initialised output layers would leave some parameters without gradient
    perturb(&mut model, 0.3, 99);
    model
}

pub fn gradient_suite() -> Check {
    let mesh = bipyramid();
    let mut model = toy_model();
    let input = EncoderInput::from_mesh(&mesh, &model.config.encoder).unwrap();
    let target = mesh.vertex_matrix();
    let eps = Array1::from(vec![0.3, -1.1, 0.7, 0.2]);
    let w = 0.4;
    let mut grad = model.zero_grad();
    objective_with_grad(&model, &input, &target, &eps, w, &mut grad).unwrap();
    let analytic = grad.flatten();
    let base = model.flatten();
    let mut p = base.clone();
    let mut worst = 0.0f64;
    for i in 0..base.len() {
        p[i] = base[i] + FD_STEP;
        model.load_flat(&p);
        let up = objective_on(&model, &input, &target, &eps, w).unwrap().0;
        p[i] = base[i] - FD_STEP;
        model.load_flat(&p);
        let down = objective_on(&model, &input, &target, &eps, w).unwrap().0;
        p[i] = base[i];
        let numeric = (up - down) / (2.0 * FD_STEP);
        worst = worst.max((analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-5));
    }
    ensure(
        worst <= FD_TOL,
        format!(
            "worst relative error {worst:.2e} over {} parameters, {} vertices, {} template points",
            base.len(),
            mesh.num_vertices(),
            5
        ),
    )
}
