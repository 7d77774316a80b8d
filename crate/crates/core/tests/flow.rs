mod common;

use ndarray::{array, Array1, Array2};
use ssmkit_core::flow::{FlowConfig, FlowLayer, FlowPrior};
use ssmkit_core::random::{normal_vec, rng_from_seed};

fn random_flow(dim: usize, seed: u64) -> FlowPrior<f64> {
    let mut rng = rng_from_seed(seed);
    let cfg = FlowConfig { coupling_layers: 6, hidden_width: 16, permutation_seed: seed };
    let mut flow = FlowPrior::new(&cfg, dim, &mut rng).unwrap();
    common::perturb(&mut flow, 0.3, seed + 1);
    flow
}

/// log|det J| by LU on a central-difference Jacobian.
fn numeric_logdet(flow: &FlowPrior<f64>, z: &Array1<f64>) -> f64 {
    let n = z.len();
    let h = 1e-6;
    let mut j = Array2::zeros((n, n));
    for c in 0..n {
        let mut zp = z.clone();
        zp[c] += h;
        let mut zm = z.clone();
        zm[c] -= h;
        let d = (flow.forward(&zp).unwrap().0 - flow.forward(&zm).unwrap().0) / (2.0 * h);
        j.column_mut(c).assign(&d);
    }
    assert_eq!(n, 2);
    (j[[0, 0]] * j[[1, 1]] - j[[0, 1]] * j[[1, 0]]).abs().ln()
}

#[test]
fn identity_flow_is_standard_normal() {
    let flow = FlowPrior::<f64>::identity(2);
    let z = array![0.3, -1.2];
    let (z0, ld) = flow.forward(&z).unwrap();
    assert_eq!(z0, z);
    assert_eq!(ld, 0.0);
    assert_eq!(flow.inverse(&z).unwrap(), z);
    let lp0 = flow.log_prob(&array![0.0, 0.0]).unwrap();
    assert!((lp0 + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-14);
    let expect = -0.5 * (0.09 + 1.44) - (2.0 * std::f64::consts::PI).ln();
    assert!((flow.log_prob(&z).unwrap() - expect).abs() < 1e-14);
}

#[test]
fn diagonal_affine_closed_form() {
    let layer = FlowLayer::ElementwiseAffine { log_scale: array![2f64.ln(), 2f64.ln()], shift: array![0.0, 0.0] };
    let flow = FlowPrior::from_layers(2, vec![layer]).unwrap();
    let (z0, ld) = flow.forward(&array![1.5, -0.5]).unwrap();
    assert!((z0[0] - 3.0).abs() < 1e-15 && (z0[1] + 1.0).abs() < 1e-15);
    assert!((ld - 2.0 * 2f64.ln()).abs() < 1e-15);
    let back = flow.inverse(&array![3.0, 4.0]).unwrap();
    assert!((back[0] - 1.5).abs() < 1e-15 && (back[1] - 2.0).abs() < 1e-15);
}

#[test]
fn untrained_flow_is_identity() {
    let mut rng = rng_from_seed(1);
    let flow = FlowPrior::<f64>::new(&FlowConfig::default(), 8, &mut rng).unwrap();
    let z = Array1::from(normal_vec::<f64, _>(&mut rng, 8));
    let (z0, ld) = flow.forward(&z).unwrap();
    // only the fixed permutations act, so the prior starts as N(0, I)
    let mut a = z0.to_vec();
    let mut b = z.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    assert_eq!(a, b);
    assert_eq!(ld, 0.0);
    let expect: f64 = z.iter().map(|v| -0.5 * v * v - 0.5 * (2.0 * std::f64::consts::PI).ln()).sum();
    assert!((flow.log_prob(&z).unwrap() - expect).abs() < 1e-12);
}

#[test]
fn round_trip_on_1000_latents() {
    let flow = random_flow(32, 5);
    let mut rng = rng_from_seed(6);
    let mut worst = 0.0f64;
    let mut worst_ld = 0.0f64;
    for _ in 0..1000 {
        let z = Array1::from(normal_vec::<f64, _>(&mut rng, 32));
        let (z0, ld) = flow.forward(&z).unwrap();
        let back = flow.inverse(&z0).unwrap();
        worst = worst.max((&back - &z).iter().fold(0.0, |m, d| m.max(d.abs())));
        worst_ld = worst_ld.max((ld + flow.inverse_logdet(&z0).unwrap()).abs());
        // the other direction
        let fwd = flow.forward(&flow.inverse(&z).unwrap()).unwrap().0;
        worst = worst.max((&fwd - &z).iter().fold(0.0, |m, d| m.max(d.abs())));
    }
    assert!(worst < 1e-5, "round trip error {worst:e}");
    assert!(worst_ld < 1e-5, "logdet sum {worst_ld:e}");
}

#[test]
fn logdet_matches_numerical_jacobian() {
    for seed in 0..5 {
        let flow = random_flow(2, 10 + seed);
        let mut rng = rng_from_seed(50 + seed);
        for _ in 0..10 {
            let z = Array1::from(normal_vec::<f64, _>(&mut rng, 2));
            let ld = flow.forward(&z).unwrap().1;
            let num = numeric_logdet(&flow, &z);
            assert!((ld - num).abs() < 1e-4, "seed {seed}: {ld} vs {num}");
        }
    }
}

/// Riemann sum of the density over `[-r, r]²`.
fn grid_mass(flow: &FlowPrior<f64>, r: f64, h: f64) -> f64 {
    let n = (2.0 * r / h).round() as usize;
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let z = array![-r + (i as f64 + 0.5) * h, -r + (j as f64 + 0.5) * h];
            total += flow.log_prob(&z).unwrap().exp();
        }
    }
    total * h * h
}

#[test]
fn density_integrates_to_one() {
    for seed in [3, 4] {
        let flow = random_flow(2, seed);
        let mass = grid_mass(&flow, 20.0, 0.1);
        assert!((mass - 1.0).abs() < 0.01, "seed {seed}: mass {mass}");
    }
}

#[test]
fn samples_match_density_marginals() {
    let flow = random_flow(2, 3);
    let n = 100_000;
    let s = flow.sample(n, 77).unwrap();
    assert_eq!(s.dim(), (n, 2));
    let (r, h) = (20.0f64, 0.05);
    let cells = (2.0 * r / h).round() as usize;
    // marginal densities on the grid by quadrature over the other coordinate
    let mut marg = [vec![0.0; cells], vec![0.0; cells]];
    for i in 0..cells {
        for j in 0..cells {
            let x = -r + (i as f64 + 0.5) * h;
            let y = -r + (j as f64 + 0.5) * h;
            let p = flow.log_prob(&array![x, y]).unwrap().exp() * h * h;
            marg[0][i] += p;
            marg[1][j] += p;
        }
    }
    for d in 0..2 {
        let mut xs: Vec<f64> = s.column(d).to_vec();
        xs.sort_by(f64::total_cmp);
        let mut cdf = Vec::with_capacity(cells);
        let mut acc = 0.0;
        for p in &marg[d] {
            acc += p;
            cdf.push(acc);
        }
        let mut ks = 0.0f64;
        let mut k = 0;
        for (i, &c) in cdf.iter().enumerate() {
            let edge = -r + (i + 1) as f64 * h;
            while k < n && xs[k] <= edge {
                k += 1;
            }
            ks = ks.max((k as f64 / n as f64 - c).abs());
        }
        assert!(ks < 0.02, "marginal {d}: KS {ks}");
    }
}

#[test]
fn sampling_is_deterministic() {
    let flow = random_flow(4, 9);
    assert_eq!(flow.sample(1, 5).unwrap(), flow.sample(1, 5).unwrap());
    let id = FlowPrior::<f64>::identity(3);
    let s = id.sample(20_000, 1).unwrap();
    let mean = s.mean_axis(ndarray::Axis(0)).unwrap();
    let var = s.var_axis(ndarray::Axis(0), 1.0);
    for d in 0..3 {
        assert!(mean[d].abs() < 0.03 && (var[d] - 1.0).abs() < 0.05);
    }
}
